//! Attention-bias analysis over trained models: per-element received
//! attention, correct-versus-incorrect tests, high/low partitions and
//! prediction accounting.

mod partition;
mod report;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::code::{AstKind, CodeUnit, SyntaxClass};
use crate::model::{mask_source_token, GuidedModel, ModelError};
use crate::subtok::{aggregate_to_source, AlignedSequence};

pub use partition::{
    fix_accounting, metrics, partition_tensor, stratified_accuracy, FixAccounting, Metrics, Partition,
    PartitionCounts, Strata,
};
pub use report::{bias_report, BiasReport, BonferroniInfo, ElementReport, GroupStats, REPORT_SCHEMA_VERSION};
pub use stats::{
    bonferroni, bonferroni_threshold, mann_whitney, mann_whitney_exact, mann_whitney_normal, midranks, paired_t,
    u_statistic, TestKind, TestResult, EXACT_LIMIT,
};

/// Per-test threshold after correction, as used in the bias analysis.
pub const CORRECTED_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("a test group is empty")]
    EmptyGroup,
    #[error("need at least 2 differences, got {0}")]
    TooFew(usize),
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("non-finite value in test input")]
    NonFinite,
    #[error("exact enumeration over {0} values is too large")]
    TooLargeForExact(usize),
    #[error("source token {src} of {unit} was truncated away")]
    ProbeTruncated { unit: String, src: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Subtok(#[from] crate::subtok::SubtokError),
}

/// A code element whose received attention is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    Syntax(SyntaxClass),
    Ast(AstKind),
}

impl Element {
    /// The eight studied syntax classes followed by the four statement kinds.
    pub fn all() -> Vec<Element> {
        SyntaxClass::STUDIED
            .iter()
            .map(|&c| Element::Syntax(c))
            .chain(AstKind::ALL.iter().map(|&k| Element::Ast(k)))
            .collect()
    }

    pub fn group(self) -> &'static str {
        match self {
            Element::Syntax(_) => "syntax",
            Element::Ast(_) => "ast",
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Syntax(c) => write!(f, "syntax:{}", c.name()),
            Element::Ast(k) => write!(f, "ast:{}", k.name()),
        }
    }
}

impl FromStr for Element {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = match s.split_once(':') {
            Some(("syntax", n)) => SyntaxClass::from_name(n).map(Element::Syntax),
            Some(("ast", n)) => AstKind::from_name(n).map(Element::Ast),
            _ => None,
        };
        parsed.ok_or_else(|| format!("unknown element {s:?}"))
    }
}

/// What an evaluation instance asks of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// Predict every subtoken of source token `src` with the whole token
    /// masked.
    Cloze { src: usize },
    /// Classify the pair.
    Clone { label: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub seq: AlignedSequence,
    pub unit: CodeUnit,
    pub probe: Probe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub unit_id: String,
    pub num_layers: usize,
    pub heads: usize,
    pub correct: bool,
    /// Indexed `layer * heads + head`, then by source token: the attention
    /// the token's subtokens receive, averaged over query rows.
    pub token_weights: Vec<Vec<f64>>,
    /// Per element present in the instance, one weight per `(layer, head)`.
    pub element_weights: BTreeMap<Element, Vec<f64>>,
}

impl AttentionRecord {
    /// `[layer][head]` view of an element's weights.
    pub fn layered(&self, e: Element) -> Option<Vec<Vec<f64>>> {
        self.element_weights
            .get(&e)
            .map(|w| w.chunks(self.heads).map(<[f64]>::to_vec).collect())
    }

    /// Element weight averaged over all layers and heads.
    pub fn overall(&self, e: Element) -> Option<f64> {
        self.element_weights
            .get(&e)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Element weights from one head's per-source-token weights. Syntax classes
/// average over their tokens; a statement kind averages the per-statement
/// means, each statement being the mean over its member tokens.
pub fn element_weights_of(
    unit: &CodeUnit,
    kept: &std::collections::BTreeSet<usize>,
    token_weights: &[f64],
) -> BTreeMap<Element, f64> {
    let mut out = BTreeMap::new();
    for &c in SyntaxClass::STUDIED.iter() {
        let w = mean(
            unit.tokens
                .iter()
                .filter(|t| t.syntax_class == c && kept.contains(&t.index))
                .map(|t| token_weights[t.index]),
        );
        if let Some(w) = w {
            out.insert(Element::Syntax(c), w);
        }
    }
    for &k in AstKind::ALL.iter() {
        let per_statement = unit
            .ast_spans
            .iter()
            .filter(|s| s.kind == k)
            .filter_map(|s| mean(s.token_range.clone().filter(|i| kept.contains(i)).map(|i| token_weights[i])));
        if let Some(w) = mean(per_statement) {
            out.insert(Element::Ast(k), w);
        }
    }
    out
}

fn record(model: &GuidedModel, item: &EvalItem) -> Result<AttentionRecord, AnalysisError> {
    let (ids, positions, expected) = match item.probe {
        Probe::Cloze { src } => {
            let m = mask_source_token(&item.seq, src).ok_or_else(|| AnalysisError::ProbeTruncated {
                unit: item.unit.id.clone(),
                src,
            })?;
            let (pos, ys): (Vec<usize>, Vec<u32>) = m.targets.into_iter().unzip();
            (m.ids, pos, Some(ys))
        }
        Probe::Clone { .. } => (item.seq.ids.clone(), Vec::new(), None),
    };
    let trace = model.forward(&ids, item.seq.real_len, &positions)?;
    let correct = match (item.probe, expected) {
        (Probe::Cloze { .. }, Some(ys)) => trace.mlm_logits.iter().zip(&ys).all(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            best.0 as u32 == y
        }),
        (Probe::Clone { label }, _) => (trace.cls_logit > 0.0) == label,
        _ => unreachable!("cloze probes carry targets"),
    };
    let r = item.seq.real_len;
    let kept = item.seq.kept_source_tokens();
    let cfg = &model.config;
    let mut token_weights = Vec::with_capacity(cfg.num_layers * cfg.heads);
    let mut element_weights: BTreeMap<Element, Vec<f64>> = BTreeMap::new();
    for a in &trace.attention {
        let mut col = vec![0.0; a.n];
        for row in 0..r {
            for (c, v) in a.row(row)[..r].iter().enumerate() {
                col[c] += v / r as f64;
            }
        }
        let agg = aggregate_to_source(&col, &item.seq)?;
        for (e, w) in element_weights_of(&item.unit, &kept, &agg.per_token) {
            element_weights.entry(e).or_default().push(w);
        }
        token_weights.push(agg.per_token);
    }
    Ok(AttentionRecord {
        unit_id: item.unit.id.clone(),
        num_layers: cfg.num_layers,
        heads: cfg.heads,
        correct,
        token_weights,
        element_weights,
    })
}

/// One record per evaluation item, in order.
pub fn collect(model: &GuidedModel, items: &[EvalItem]) -> Result<Vec<AttentionRecord>, AnalysisError> {
    crate::exec::map(items, |it| record(model, it)).into_iter().collect()
}

/// Partition labels of every record for `element`.
pub fn partition_high_low(records: &[AttentionRecord], element: Element) -> Vec<Partition> {
    let w: Vec<_> = records.iter().map(|r| r.layered(element)).collect();
    partition_tensor(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::parse;
    use crate::model::ModelConfig;
    use crate::patterns::HeadAssignment;
    use crate::subtok::{build_vocab, encode};

    #[test]
    fn element_names_round_trip() {
        let all = Element::all();
        assert_eq!(all.len(), 12);
        for e in all {
            assert_eq!(e.to_string().parse::<Element>().unwrap(), e);
        }
        assert!("syntax:number".parse::<Element>().is_ok());
        assert!("ast:for".parse::<Element>().is_err());
    }

    #[test]
    fn statement_weight_is_mean_of_members() {
        let u = parse("u", "return a ; x = b ;").unwrap();
        let kept = (0..u.tokens.len()).collect();
        let w = element_weights_of(&u, &kept, &[0.3, 0.6, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!((w[&Element::Ast(AstKind::Return)] - 0.3).abs() < 1e-12);
        assert_eq!(w[&Element::Syntax(SyntaxClass::Identifier)], (0.6 + 1.0 + 1.0) / 3.0);
        assert!(!w.contains_key(&Element::Ast(AstKind::While)));
    }

    fn fixture() -> (GuidedModel, Vec<EvalItem>) {
        let srcs = ["int a = b + c ;", "if ( a > b ) { return a ; } else { return b ; }"];
        let units: Vec<_> = srcs.iter().enumerate().map(|(i, s)| parse(&format!("u{i}"), s).unwrap()).collect();
        let vocab = build_vocab(&units, 60).unwrap();
        let mut cfg = ModelConfig::toy(vocab.len(), 2);
        (cfg.num_layers, cfg.heads, cfg.model_dim, cfg.ffn_dim, cfg.max_len) = (2, 2, 8, 16, 32);
        let model = GuidedModel::new(cfg, HeadAssignment::none(2, 2), 0.0).unwrap();
        let items = units
            .iter()
            .map(|u| EvalItem {
                seq: encode(u, &vocab, 32),
                unit: u.clone(),
                probe: Probe::Cloze { src: 1 },
            })
            .collect();
        (model, items)
    }

    #[test]
    fn collect_is_total_and_deterministic() {
        let (m, items) = fixture();
        let twice: Vec<_> = items.iter().chain(&items).cloned().collect();
        let recs = collect(&m, &twice).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0], recs[2]);
        assert_eq!(recs[1], recs[3]);
        for r in &recs {
            assert_eq!(r.token_weights.len(), 4);
            for w in &r.token_weights {
                assert!(w.iter().all(|&x| x >= 0.0));
            }
        }
        let layered = recs[1].layered(Element::Ast(AstKind::IfElse)).unwrap();
        assert_eq!(layered.len(), 2);
        assert_eq!(layered[0].len(), 2);
    }
}
