//! Finite-difference check of the analytic gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_loss_and_grad, total_loss};
use super::{AlphaSchedule, Example, GuidedModel, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index and `(analytic, numeric)` of the worst parameter.
    pub worst: (usize, f64, f64),
}

/// Compares the backward pass with central differences of [`total_loss`] on
/// `samples` randomly chosen parameters. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(
    model: &GuidedModel,
    batch: &[Example],
    progress: f64,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheck, ModelError> {
    let alpha = AlphaSchedule::at(model.schedule.alpha0, progress);
    let (_, grad) = batch_loss_and_grad(model, batch, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.num_params();
    let picked = sample(&mut rng, n, samples.min(n));
    let mut probe = model.clone();
    let mut out = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: (0, 0.0, 0.0),
    };
    for i in picked.iter() {
        let orig = probe.params[i];
        probe.params[i] = orig + eps;
        let up = total_loss(&probe, batch, progress)?.total;
        probe.params[i] = orig - eps;
        let down = total_loss(&probe, batch, progress)?.total;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > out.max_rel_error || out.checked == 0 {
            out.max_rel_error = rel;
            out.worst = (i, analytic, numeric);
        }
        out.checked += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::parse;
    use crate::model::{ModelConfig, Target};
    use crate::patterns::{HeadAssignment, PatternSpec};
    use crate::subtok::{build_vocab, encode};

    fn tiny(target: impl Fn(&crate::subtok::AlignedSequence) -> Target) -> (GuidedModel, Vec<Example>) {
        let u = parse("g", "int a = b + c ;").unwrap();
        let vocab = build_vocab(std::slice::from_ref(&u), 30).unwrap();
        let cfg = ModelConfig {
            num_layers: 2,
            heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            vocab_size: vocab.len(),
            max_len: 12,
            mask_rate: 0.15,
            seed: 11,
        };
        let spec = "syntax:identifier".parse::<PatternSpec>().unwrap();
        let g = HeadAssignment::from_per_head(2, vec![Some(spec), None]);
        let model = GuidedModel::new(cfg, g.clone(), 1.0).unwrap();
        let seq = encode(&u, &vocab, 12);
        let ex = Example::new(seq.ids.clone(), &seq, &u, target(&seq), &g).unwrap();
        (model, vec![ex])
    }

    #[test]
    fn mlm_gradient_matches_differences() {
        let (m, batch) = tiny(|s| Target::Mlm(vec![(2, s.ids[2]), (4, s.ids[4])]));
        let r = gradient_check(&m, &batch, 0.3, 1e-4, 200, 1).unwrap();
        assert_eq!(r.checked, 200);
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn clone_gradient_matches_differences() {
        let (m, batch) = tiny(|_| Target::Clone(true));
        let r = gradient_check(&m, &batch, 0.0, 1e-4, 200, 2).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
