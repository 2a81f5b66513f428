//! Mini-batch training on the combined objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::batch_loss_and_grad;
use super::masking::apply_mlm_mask;
use super::params::Adam;
use super::{AlphaSchedule, Example, GuidedModel, ModelError, Target, Task};
use crate::code::CodeUnit;
use crate::subtok::AlignedSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds batch order and mask draws. Two runs with the same data seed see
    /// identical batches and masks whatever their guiding settings.
    pub data_seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            epochs: 3,
            batch_size: 32,
            data_seed: 0,
        }
    }
}

/// An encoded training instance. For pairs, `unit` is the concatenation of
/// both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub seq: AlignedSequence,
    pub unit: CodeUnit,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub task: f64,
    pub sag: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,L_task,L_SAG,alpha\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.step, r.task, r.sag, r.alpha));
        }
        s
    }
}

pub(crate) fn make_example(
    model: &GuidedModel,
    item: &TrainItem,
    task: Task,
    rng: &mut ChaCha8Rng,
) -> Result<Example, ModelError> {
    let (ids, target) = match task {
        Task::Cloze => {
            let m = apply_mlm_mask(&item.seq, model.config.vocab_size, model.config.mask_rate, rng);
            (m.ids, Target::Mlm(m.targets))
        }
        Task::Clone => (
            item.seq.ids.clone(),
            Target::Clone(item.label.expect("clone items carry a label")),
        ),
    };
    Example::new(ids, &item.seq, &item.unit, target, &model.guiding)
}

/// Trains `model` in place with Adam on `task_loss + alpha(t) * sag_loss`,
/// `alpha(t) = alpha0 * (1 - step / total_steps)`.
pub fn train(
    model: &mut GuidedModel,
    items: &[TrainItem],
    task: Task,
    hyper: &TrainHyper,
) -> Result<TrainLog, ModelError> {
    if hyper.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
    }
    let steps_per_epoch = items.len().div_ceil(hyper.batch_size);
    let total_steps = (steps_per_epoch * hyper.epochs) as u64;
    model.schedule = AlphaSchedule::new(model.schedule.alpha0, total_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.data_seed);
    let mut opt = Adam::new(model.num_params(), hyper.lr);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..items.len()).collect();

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let step = model.schedule.step as usize;
            let alpha = model.schedule.alpha();
            let batch = chunk
                .iter()
                .map(|&i| make_example(model, &items[i], task, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let (parts, grad) = batch_loss_and_grad(model, &batch, alpha)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss {
                    step,
                    task: parts.task,
                    sag: parts.sag,
                });
            }
            log.rows.push(LogRow {
                step,
                task: parts.task,
                sag: parts.sag,
                alpha,
            });
            opt.step(&mut model.params, &grad);
            model.schedule.step += 1;
        }
    }
    Ok(log)
}

impl GuidedModel {
    /// Argmax token at each of `positions`.
    pub fn predict_tokens(&self, ids: &[u32], real_len: usize, positions: &[usize]) -> Result<Vec<u32>, ModelError> {
        let cache = self.forward_cached(ids, real_len)?;
        Ok(positions
            .iter()
            .map(|&p| {
                let logits = self.mlm_logits(&cache.out, p);
                logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0 as u32
            })
            .collect())
    }

    pub fn predict_pair(&self, ids: &[u32], real_len: usize) -> Result<bool, ModelError> {
        let cache = self.forward_cached(ids, real_len)?;
        Ok(self.cls_logit(&cache.out) > 0.0)
    }
}
