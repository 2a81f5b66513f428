//! Quick oracle checks runnable from the command line.

use crate::analysis::{mann_whitney, paired_t, partition_tensor, Partition};
use crate::code::{parse, SyntaxClass};
use crate::model::{ag_loss, gradient_check, AttentionMatrix, Example, GuidedModel, ModelConfig, Target};
use crate::patterns::{build_pattern, HeadAssignment, PatternSpec};
use crate::subtok::{build_vocab, encode};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn gradients() -> Check {
    let run = || -> Result<f64, Box<dyn std::error::Error>> {
        let u = parse("g", "int a = b + c ;")?;
        let vocab = build_vocab(std::slice::from_ref(&u), 30)?;
        let cfg = ModelConfig {
            num_layers: 2,
            heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            vocab_size: vocab.len(),
            max_len: 12,
            mask_rate: 0.15,
            seed: 1,
        };
        let g = HeadAssignment::from_per_head(2, vec![Some(PatternSpec::Syntax(SyntaxClass::Identifier)), None]);
        let model = GuidedModel::new(cfg, g.clone(), 1.0)?;
        let seq = encode(&u, &vocab, 12);
        let ex = Example::new(seq.ids.clone(), &seq, &u, Target::Mlm(vec![(2, seq.ids[2])]), &g)?;
        Ok(gradient_check(&model, &[ex], 0.25, 1e-4, 200, 0)?.max_rel_error)
    };
    match run() {
        Ok(e) => check("gradient check", e < 1e-3, format!("max relative error {e:.3e}")),
        Err(e) => check("gradient check", false, e.to_string()),
    }
}

fn pattern() -> Check {
    let run = || -> Result<Vec<usize>, Box<dyn std::error::Error>> {
        let u = parse("sum", "sum = num1 + num2 ;")?;
        let vocab = build_vocab(std::slice::from_ref(&u), 64)?;
        let seq = encode(&u, &vocab, 16);
        let p = build_pattern(&seq, &u, PatternSpec::Syntax(SyntaxClass::Identifier))?;
        Ok((0..p.n).filter(|&c| p.get(1, c) == 1.0 / 3.0).collect())
    };
    match run() {
        Ok(cols) => check("identifier pattern", cols == [1, 3, 5], format!("columns {cols:?}")),
        Err(e) => check("identifier pattern", false, e.to_string()),
    }
}

/// Runs the built-in oracle checks.
pub fn selftest() -> Vec<Check> {
    let mut out = vec![pattern()];
    let h = AttentionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let p = crate::patterns::PatternMatrix {
        spec: PatternSpec::Syntax(SyntaxClass::Identifier),
        unit_id: "t".into(),
        n: 2,
        real_len: 2,
        values: vec![0.0, 1.0, 1.0, 0.0],
        row_included: vec![true, true],
    };
    let ag = ag_loss(&h, &p).map(|v| (v - 2.0).abs() < 1e-12).unwrap_or(false);
    out.push(check("guiding loss 2x2", ag, "expected 2".into()));
    out.push(gradients());
    let mw = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map(|r| r.p_value);
    out.push(check(
        "mann-whitney exact",
        mw.as_ref().is_ok_and(|p| (p - 0.1).abs() < 1e-12),
        format!("{mw:?}"),
    ));
    let t = paired_t(&[1.0, 2.0, 3.0]).map(|r| r.p_value);
    out.push(check(
        "paired t",
        t.as_ref().is_ok_and(|p| (p - 0.0742).abs() < 5e-4),
        format!("{t:?}"),
    ));
    let labels = partition_tensor(&[
        Some(vec![vec![0.9, 0.8], vec![0.7, 0.9]]),
        Some(vec![vec![0.1, 0.2], vec![0.1, 0.0]]),
    ]);
    out.push(check(
        "high/low partition",
        labels == [Partition::High, Partition::Low],
        format!("{labels:?}"),
    ));
    out
}
