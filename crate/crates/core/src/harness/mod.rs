//! Corpus generation and baseline-versus-guided experiments.

mod corpus;
mod selftest;
mod sweep;

use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    bias_report, collect, fix_accounting, metrics, AnalysisError, AttentionRecord, BiasReport, Element, EvalItem,
    Metrics, Probe, CORRECTED_THRESHOLD,
};
use crate::code::{parse_corpus, read_corpus, CodeUnit, CorpusError, CorpusRecord};
use crate::model::{mask_source_token, train, GuidedModel, ModelConfig, ModelError, Task, TrainHyper, TrainItem, TrainLog};
use crate::patterns::{assign_heads, build_pattern, parse_pattern_list, HeadAssignment, PatternError};
use crate::subtok::{build_vocab, encode, encode_pair, SubtokError, Vocab};

pub use corpus::{alpha_rename, gen_corpus, CorpusParams, MAX_SNIPPET_TOKENS};
pub use selftest::{selftest, Check};
pub use sweep::{sweep, SweepAxis, SweepRow, SweepTable, ALPHA0_GRID, FRACTION_GRID};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Subtok(#[from] SubtokError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Problems with the experiment description rather than with running it.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::Invalid(_) | HarnessError::Pattern(_) | HarnessError::Model(ModelError::InvalidConfig(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusSource {
    File { path: PathBuf },
    Generated(CorpusParams),
}

/// Model shape; the vocabulary size is fixed once the vocabulary is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
}

fn default_mask_rate() -> f64 {
    0.15
}

impl Default for ModelShape {
    fn default() -> Self {
        let t = ModelConfig::toy(0, 0);
        Self {
            num_layers: t.num_layers,
            heads: t.heads,
            model_dim: t.model_dim,
            ffn_dim: t.ffn_dim,
            max_len: t.max_len,
            mask_rate: t.mask_rate,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            heads: self.heads,
            model_dim: self.model_dim,
            ffn_dim: self.ffn_dim,
            vocab_size,
            max_len: self.max_len,
            mask_rate: self.mask_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha0: f64,
    pub lambda: f64,
    /// Comma-separated pattern groups or specs, e.g. `syntax,ast`.
    pub patterns: String,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            epochs: 3,
            batch_size: 32,
            alpha0: 1.0,
            lambda: 0.5,
            patterns: "syntax,ast".into(),
        }
    }
}

fn default_folds() -> usize {
    5
}
fn default_fraction() -> f64 {
    1.0
}
fn default_vocab() -> usize {
    256
}
fn default_probes() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub task: Task,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    /// Seeds splits, initial parameters, batch order, masks and probes.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_vocab")]
    pub max_vocab: usize,
    /// Cloze targets per evaluation snippet.
    #[serde(default = "default_probes")]
    pub probes_per_snippet: usize,
}

impl ExperimentSpec {
    pub fn toy(task: Task, num_snippets: usize, seed: u64) -> Self {
        Self {
            task,
            corpus: CorpusSource::Generated(CorpusParams {
                num_snippets,
                seed: 7,
            }),
            model: ModelShape::default(),
            hyper: Hyper::default(),
            folds: default_folds(),
            train_fraction: 1.0,
            seed,
            max_vocab: default_vocab(),
            probes_per_snippet: default_probes(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        if self.folds == 0 {
            return bad("folds must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} is outside (0, 1]", self.train_fraction));
        }
        if !(self.hyper.alpha0.is_finite() && self.hyper.alpha0 >= 0.0) {
            return bad(format!("alpha0 {} must be finite and non-negative", self.hyper.alpha0));
        }
        if self.hyper.batch_size == 0 || self.hyper.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.probes_per_snippet == 0 {
            return bad("probes_per_snippet must be positive".into());
        }
        parse_pattern_list(&self.hyper.patterns)?;
        self.model.config(self.max_vocab, 0).validate()?;
        Ok(())
    }

    pub fn guiding(&self) -> Result<HeadAssignment, HarnessError> {
        let specs = parse_pattern_list(&self.hyper.patterns)?;
        Ok(assign_heads(self.model.num_layers, self.model.heads, self.hyper.lambda, &specs)?)
    }

    pub fn load_corpus(&self) -> Result<Vec<CodeUnit>, HarnessError> {
        let records: Vec<CorpusRecord> = match &self.corpus {
            CorpusSource::Generated(p) => gen_corpus(p),
            CorpusSource::File { path } => read_corpus(std::io::BufReader::new(std::fs::File::open(path)?))?,
        };
        Ok(parse_corpus(&records)?)
    }
}

/// Train/eval index pairs over `n` items. One fold is an 80/20 holdout;
/// otherwise `folds`-fold cross-validation over a seeded permutation.
pub fn fold_splits(n: usize, folds: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if folds <= 1 {
        let cut = n - n / 5;
        return vec![(idx[..cut].to_vec(), idx[cut..].to_vec())];
    }
    (0..folds)
        .map(|k| {
            let (lo, hi) = (k * n / folds, (k + 1) * n / folds);
            let eval = idx[lo..hi].to_vec();
            let train = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            (train, eval)
        })
        .collect()
}

/// The first `ceil(fraction * len)` items of a seeded permutation, so smaller
/// fractions are subsets of larger ones.
pub fn train_subset(train: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let keep = ((fraction * train.len() as f64).ceil() as usize).clamp(1, train.len().max(1));
    order.truncate(keep);
    order
}

/// Training and evaluation instances for one fold.
pub struct FoldData {
    pub vocab: Vocab,
    pub train: Vec<TrainItem>,
    pub eval: Vec<EvalItem>,
}

fn cloze_items(units: &[&CodeUnit], vocab: &Vocab, spec: &ExperimentSpec, rng: &mut ChaCha8Rng) -> FoldData {
    let train = Vec::new();
    let mut eval = Vec::new();
    for u in units {
        let seq = encode(u, vocab, spec.model.max_len);
        let kept = seq.kept_source_tokens();
        let candidates: Vec<usize> = u
            .tokens
            .iter()
            .filter(|t| t.syntax_class.is_studied() && kept.contains(&t.index))
            .map(|t| t.index)
            .collect();
        let k = spec.probes_per_snippet.min(candidates.len());
        for &src in candidates.choose_multiple(rng, k) {
            debug_assert!(mask_source_token(&seq, src).is_some());
            eval.push(EvalItem {
                seq: seq.clone(),
                unit: (*u).clone(),
                probe: Probe::Cloze { src },
            });
        }
    }
    FoldData {
        vocab: vocab.clone(),
        train,
        eval,
    }
}

/// Positive pairs are a snippet with an α-renamed copy; negatives pair it with
/// another snippet. Labels alternate.
pub fn clone_pairs(units: &[&CodeUnit], rng: &mut ChaCha8Rng) -> Vec<(CodeUnit, CodeUnit, bool)> {
    units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let positive = i % 2 == 0;
            let other = if positive || units.len() < 2 {
                alpha_rename(u, &format!("{}~", u.id), rng)
            } else {
                let mut j = rng.random_range(0..units.len() - 1);
                if j >= i {
                    j += 1;
                }
                units[j].clone()
            };
            ((*u).clone(), other, positive || units.len() < 2)
        })
        .collect()
}

fn pair_items(
    pairs: &[(CodeUnit, CodeUnit, bool)],
    vocab: &Vocab,
    max_len: usize,
) -> Vec<(TrainItem, EvalItem)> {
    pairs
        .iter()
        .map(|(a, b, label)| {
            let seq = encode_pair(a, b, vocab, max_len);
            let unit = CodeUnit::concat(a, b);
            (
                TrainItem {
                    seq: seq.clone(),
                    unit: unit.clone(),
                    label: Some(*label),
                },
                EvalItem {
                    seq,
                    unit,
                    probe: Probe::Clone { label: *label },
                },
            )
        })
        .collect()
}

/// Encodes one fold: the vocabulary comes from the training snippets only.
pub fn prepare_fold(
    spec: &ExperimentSpec,
    units: &[CodeUnit],
    train_idx: &[usize],
    eval_idx: &[usize],
    fold: usize,
) -> Result<FoldData, HarnessError> {
    let train_units: Vec<&CodeUnit> = train_idx.iter().map(|&i| &units[i]).collect();
    let eval_units: Vec<&CodeUnit> = eval_idx.iter().map(|&i| &units[i]).collect();
    let owned: Vec<CodeUnit> = train_units.iter().map(|u| (*u).clone()).collect();
    let vocab = build_vocab(&owned, spec.max_vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1000).wrapping_add(fold as u64));
    match spec.task {
        Task::Cloze => {
            let mut data = cloze_items(&eval_units, &vocab, spec, &mut rng);
            data.train = train_units
                .iter()
                .map(|u| TrainItem {
                    seq: encode(u, &vocab, spec.model.max_len),
                    unit: (*u).clone(),
                    label: None,
                })
                .collect();
            Ok(data)
        }
        Task::Clone => {
            let train = pair_items(&clone_pairs(&train_units, &mut rng), &vocab, spec.model.max_len);
            let eval = pair_items(&clone_pairs(&eval_units, &mut rng), &vocab, spec.model.max_len);
            Ok(FoldData {
                vocab,
                train: train.into_iter().map(|(t, _)| t).collect(),
                eval: eval.into_iter().map(|(_, e)| e).collect(),
            })
        }
    }
}

/// Mean attention a model's heads put on the columns their pattern targets,
/// averaged over the pattern's included rows and over the guided heads of
/// `guiding`; one value per item that has at least one included row.
pub fn target_mass(model: &GuidedModel, items: &[EvalItem], guiding: &HeadAssignment) -> Result<Vec<f64>, HarnessError> {
    let per_item = crate::exec::map(items, |it| -> Result<Option<f64>, HarnessError> {
        let (ids, positions) = match it.probe {
            Probe::Cloze { src } => {
                let m = mask_source_token(&it.seq, src).expect("probe survives encoding");
                (m.ids, m.targets.iter().map(|t| t.0).collect::<Vec<_>>())
            }
            Probe::Clone { .. } => (it.seq.ids.clone(), Vec::new()),
        };
        let trace = model.forward(&ids, it.seq.real_len, &positions)?;
        let mut masses = Vec::new();
        for (layer, head, spec) in guiding.guided() {
            let p = build_pattern(&it.seq, &it.unit, spec)?;
            let h = trace.attention(layer, head);
            let rows: Vec<usize> = p.included_rows().collect();
            if rows.is_empty() {
                continue;
            }
            let sum: f64 = rows
                .iter()
                .map(|&r| (0..p.real_len).filter(|&c| p.get(r, c) > 0.0).map(|c| h.get(r, c)).sum::<f64>())
                .sum();
            masses.push(sum / rows.len() as f64);
        }
        Ok((!masses.is_empty()).then(|| masses.iter().sum::<f64>() / masses.len() as f64))
    });
    let mut out = Vec::new();
    for m in per_item {
        out.extend(m?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub model: GuidedModel,
    pub log: TrainLog,
    pub records: Vec<AttentionRecord>,
    pub accuracy: f64,
    pub metrics: Option<Metrics>,
    pub report: BiasReport,
    /// See [`target_mass`]; measured on the guided arm's heads in both arms.
    pub target_mass: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub vocab: Vocab,
    pub train_size: usize,
    pub eval_size: usize,
    pub baseline: Arm,
    pub guided: Arm,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: ExperimentSpec,
    pub folds: Vec<FoldOutcome>,
}

impl RunOutcome {
    pub fn mean_accuracy(&self) -> (f64, f64) {
        let n = self.folds.len() as f64;
        let b = self.folds.iter().map(|f| f.baseline.accuracy).sum::<f64>() / n;
        let g = self.folds.iter().map(|f| f.guided.accuracy).sum::<f64>() / n;
        (b, g)
    }

    pub fn mean_f1(&self) -> (Option<f64>, Option<f64>) {
        let avg = |pick: fn(&FoldOutcome) -> Option<f64>| {
            let v: Option<Vec<f64>> = self.folds.iter().map(pick).collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        (
            avg(|f| f.baseline.metrics.and_then(|m| m.f1)),
            avg(|f| f.guided.metrics.and_then(|m| m.f1)),
        )
    }
}

fn train_arm(
    spec: &ExperimentSpec,
    data: &FoldData,
    train_idx: &[usize],
    guiding: &HeadAssignment,
    alpha0: f64,
) -> Result<Arm, HarnessError> {
    let cfg = spec.model.config(data.vocab.len(), spec.seed);
    let mut model = GuidedModel::new(cfg, guiding.clone(), alpha0)?;
    let items: Vec<TrainItem> = train_idx.iter().map(|&i| data.train[i].clone()).collect();
    let hyper = TrainHyper {
        lr: spec.hyper.lr,
        epochs: spec.hyper.epochs,
        batch_size: spec.hyper.batch_size,
        data_seed: spec.seed,
    };
    let log = train(&mut model, &items, spec.task, &hyper)?;
    let records = collect(&model, &data.eval)?;
    let accuracy = records.iter().filter(|r| r.correct).count() as f64 / records.len().max(1) as f64;
    let metrics = match spec.task {
        Task::Cloze => None,
        Task::Clone => {
            let (preds, labels): (Vec<bool>, Vec<bool>) = records
                .iter()
                .zip(&data.eval)
                .map(|(r, it)| {
                    let Probe::Clone { label } = it.probe else { unreachable!("clone items") };
                    (if r.correct { label } else { !label }, label)
                })
                .unzip();
            Some(metrics(&preds, &labels))
        }
    };
    let report = bias_report(&records, &Element::all(), CORRECTED_THRESHOLD);
    let target_mass = target_mass(&model, &data.eval, guiding)?;
    Ok(Arm {
        model,
        log,
        records,
        accuracy,
        metrics,
        report,
        target_mass,
    })
}

/// Trains the baseline (`alpha0 = 0`) and the guided model on every fold with
/// the same splits, initial parameters, batches and masks, then analyses both.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutcome, HarnessError> {
    spec.validate()?;
    let units = spec.load_corpus()?;
    if units.len() < 2 {
        return Err(HarnessError::Invalid("corpus needs at least 2 snippets".into()));
    }
    let guiding = spec.guiding()?;
    let mut folds = Vec::new();
    for (k, (train_idx, eval_idx)) in fold_splits(units.len(), spec.folds, spec.seed).into_iter().enumerate() {
        let data = prepare_fold(spec, &units, &train_idx, &eval_idx, k)?;
        let all: Vec<usize> = (0..data.train.len()).collect();
        let subset = train_subset(&all, spec.train_fraction, spec.seed);
        let baseline = train_arm(spec, &data, &subset, &guiding, 0.0)?;
        let mut guided = train_arm(spec, &data, &subset, &guiding, spec.hyper.alpha0)?;
        let correct = |a: &Arm| a.records.iter().map(|r| r.correct).collect::<Vec<_>>();
        let truth = vec![true; data.eval.len()];
        guided.report.fixes = Some(fix_accounting(&correct(&baseline), &correct(&guided), &truth));
        folds.push(FoldOutcome {
            fold: k,
            train_size: subset.len(),
            eval_size: data.eval.len(),
            vocab: data.vocab,
            baseline,
            guided,
        });
    }
    Ok(RunOutcome {
        spec: spec.clone(),
        folds,
    })
}

/// Cloze experiment; the spec's task must be `Cloze`.
pub fn run_cloze(spec: &ExperimentSpec) -> Result<RunOutcome, HarnessError> {
    if spec.task != Task::Cloze {
        return Err(HarnessError::Invalid("run_cloze needs task cloze".into()));
    }
    run_experiment(spec)
}

/// Toy clone-detection experiment; the spec's task must be `Clone`.
pub fn run_clone_toy(spec: &ExperimentSpec) -> Result<RunOutcome, HarnessError> {
    if spec.task != Task::Clone {
        return Err(HarnessError::Invalid("run_clone_toy needs task clone".into()));
    }
    run_experiment(spec)
}

/// Evaluation items for a saved model over a corpus, as `run_experiment`
/// builds them.
pub fn eval_items(
    task: Task,
    units: &[CodeUnit],
    vocab: &Vocab,
    max_len: usize,
    probes_per_snippet: usize,
    seed: u64,
) -> Vec<EvalItem> {
    let refs: Vec<&CodeUnit> = units.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        Task::Cloze => {
            let mut spec = ExperimentSpec::toy(Task::Cloze, 0, seed);
            spec.model.max_len = max_len;
            spec.probes_per_snippet = probes_per_snippet;
            cloze_items(&refs, vocab, &spec, &mut rng).eval
        }
        Task::Clone => pair_items(&clone_pairs(&refs, &mut rng), vocab, max_len)
            .into_iter()
            .map(|(_, e)| e)
            .collect(),
    }
}
