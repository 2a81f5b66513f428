//! Task losses, the attention-guiding loss and the combined objective.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::encoder::{AttentionMatrix, Cache, ForwardTrace};
use super::{AlphaSchedule, Example, GuidedModel, ModelError, Target};
use crate::patterns::{HeadAssignment, PatternMatrix};

/// Mean cross-entropy of `targets` under `logits` (one logit row per
/// target).
pub fn mlm_loss(logits: &[Vec<f64>], targets: &[u32]) -> f64 {
    assert_eq!(logits.len(), targets.len(), "one logit row per target");
    if targets.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y as usize]
        })
        .sum();
    total / targets.len() as f64
}

/// Binary cross-entropy of a single logit, computed as
/// `softplus(z) - y * z`.
pub fn bce_with_logit(logit: f64, label: bool) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    softplus - if label { logit } else { 0.0 }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Frobenius norm of `H - P` over the included rows of `P` and its non-pad
/// columns.
pub fn ag_loss(h: &AttentionMatrix, p: &PatternMatrix) -> Result<f64, ModelError> {
    if h.n != p.n {
        return Err(ModelError::DimMismatch { h: h.n, p: p.n });
    }
    let mut sq = 0.0;
    for r in p.included_rows() {
        for c in 0..p.real_len {
            let d = h.get(r, c) - p.get(r, c);
            sq += d * d;
        }
    }
    Ok(sq.sqrt())
}

/// Sum of [`ag_loss`] over every guided `(layer, head)`; head `j` is compared
/// with `patterns[j]`.
pub fn sag_loss(
    trace: &ForwardTrace,
    guiding: &HeadAssignment,
    patterns: &[Option<PatternMatrix>],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (layer, head, _) in guiding.guided() {
        if let Some(p) = patterns.get(head).and_then(Option::as_ref) {
            total += ag_loss(trace.attention(layer, head), p)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub task: f64,
    pub sag: f64,
    pub alpha: f64,
    pub total: f64,
}

impl LossParts {
    fn combine(task: f64, sag: f64, alpha: f64) -> Self {
        Self {
            task,
            sag,
            alpha,
            total: task + alpha * sag,
        }
    }
}

fn mlm_parts(target: &Target) -> (Vec<usize>, Vec<u32>) {
    match target {
        Target::Mlm(t) => t.iter().copied().unzip(),
        Target::Clone(_) => (Vec::new(), Vec::new()),
    }
}

/// Batch objective at training progress `t`:
/// `mean(L_task) + alpha0 * (1 - t) * mean(L_SAG)`. Computed through the
/// public forward trace, independently of the backward pass.
pub fn total_loss(model: &GuidedModel, batch: &[Example], progress: f64) -> Result<LossParts, ModelError> {
    let mut task = 0.0;
    let mut sag = 0.0;
    for ex in batch {
        let (positions, targets) = mlm_parts(&ex.target);
        let trace = model.forward(&ex.ids, ex.real_len, &positions)?;
        task += match &ex.target {
            Target::Mlm(_) => mlm_loss(&trace.mlm_logits, &targets),
            Target::Clone(label) => bce_with_logit(trace.cls_logit, *label),
        };
        sag += sag_loss(&trace, &model.guiding, &ex.patterns)?;
    }
    let b = batch.len().max(1) as f64;
    let alpha = AlphaSchedule::at(model.schedule.alpha0, progress);
    Ok(LossParts::combine(task / b, sag / b, alpha))
}

/// Loss parts of one example and the gradient of `task + alpha * sag`,
/// scaled by `weight`, accumulated into `grad`.
pub(crate) fn example_loss_and_grad(
    model: &GuidedModel,
    ex: &Example,
    alpha: f64,
    weight: f64,
    grad: &mut [f64],
) -> Result<(f64, f64), ModelError> {
    let cache: Cache = model.forward_cached(&ex.ids, ex.real_len)?;
    let r = ex.real_len;
    let d = model.config.model_dim;
    let mut d_out = Array2::<f64>::zeros((r, d));
    let lay = &model.layout;

    let task = match &ex.target {
        Target::Mlm(targets) => {
            let n = targets.len() as f64;
            let mut loss = 0.0;
            let w = lay.mlm_w.mat(&model.params);
            for &(pos, y) in targets {
                let mut probs = model.mlm_logits(&cache.out, pos);
                let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + probs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - probs[y as usize];
                for v in probs.iter_mut() {
                    *v = (*v - lse).exp() * weight / n;
                }
                probs[y as usize] -= weight / n;
                let dlogits = ndarray::Array1::from(probs);
                let h = cache.out.row(pos);
                lay.mlm_w
                    .mat_mut(grad)
                    .scaled_add(1.0, &h.insert_axis(Axis(1)).dot(&dlogits.view().insert_axis(Axis(0))));
                lay.mlm_b.vec_mut(grad).scaled_add(1.0, &dlogits);
                d_out.row_mut(pos).scaled_add(1.0, &w.dot(&dlogits));
            }
            if targets.is_empty() {
                0.0
            } else {
                loss / n
            }
        }
        Target::Clone(label) => {
            let z = model.cls_logit(&cache.out);
            let dz = (sigmoid(z) - if *label { 1.0 } else { 0.0 }) * weight;
            let h = cache.out.row(0).to_owned();
            lay.cls_w.vec_mut(grad).scaled_add(dz, &h);
            grad[lay.cls_b.offset] += dz;
            d_out
                .row_mut(0)
                .scaled_add(dz, &lay.cls_w.vec(&model.params));
            bce_with_logit(z, *label)
        }
    };

    let mut sag = 0.0;
    let heads = model.config.heads;
    let mut d_attn: Vec<Vec<Option<Array2<f64>>>> = vec![vec![None; heads]; model.config.num_layers];
    for (layer, head, _) in model.guiding.guided() {
        let Some(p) = ex.patterns.get(head).and_then(Option::as_ref) else {
            continue;
        };
        let a = &cache.layers[layer].attn[head];
        let mut diff = Array2::<f64>::zeros((r, r));
        for row in p.included_rows() {
            for c in 0..r {
                diff[[row, c]] = a[[row, c]] - p.get(row, c);
            }
        }
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        sag += norm;
        if norm > 0.0 && alpha != 0.0 {
            d_attn[layer][head] = Some(diff * (alpha * weight / norm));
        }
    }

    model.backward(&cache, d_out, &d_attn, grad);
    Ok((task, sag))
}

/// Mean loss over `batch` and its gradient.
pub(crate) fn batch_loss_and_grad(
    model: &GuidedModel,
    batch: &[Example],
    alpha: f64,
) -> Result<(LossParts, Vec<f64>), ModelError> {
    let b = batch.len().max(1) as f64;
    let per_example = crate::exec::map(batch, |ex| {
        let mut g = vec![0.0; model.num_params()];
        example_loss_and_grad(model, ex, alpha, 1.0 / b, &mut g).map(|l| (l, g))
    });
    let mut grad = vec![0.0; model.num_params()];
    let (mut task, mut sag) = (0.0, 0.0);
    for res in per_example {
        let ((t, s), g) = res?;
        task += t;
        sag += s;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((LossParts::combine(task / b, sag / b, alpha), grad))
}
