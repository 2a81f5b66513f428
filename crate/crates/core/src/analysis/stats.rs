//! Hypothesis tests used by the bias analysis.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::AnalysisError;

/// Pooled size at or below which Mann-Whitney p-values are exact.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    MannWhitney,
    PairedT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub element: String,
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub significant_after_bonferroni: bool,
}

impl TestResult {
    fn new(test: TestKind, statistic: f64, p_value: f64) -> Self {
        Self {
            element: String::new(),
            test,
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            significant_after_bonferroni: false,
        }
    }

    pub fn for_element(mut self, element: impl Into<String>) -> Self {
        self.element = element.into();
        self
    }
}

/// Midranks (1-based) of `values`, ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<(), AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// `U_A = R_A - n_A (n_A + 1) / 2` from pooled midranks.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..a.len()].iter().sum();
    let na = a.len() as f64;
    ra - na * (na + 1.0) / 2.0
}

/// Two-sided exact p-value: the share of all `C(n, n_A)` relabelings of the
/// pooled midranks whose `U` is at least as far from its mean as observed.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<TestResult, AnalysisError> {
    check_groups(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let (na, n) = (a.len(), pooled.len());
    if n > 24 {
        return Err(AnalysisError::TooLargeForExact(n));
    }
    let offset = (na * (na + 1)) as f64 / 2.0;
    let mean = (na * (n - na)) as f64 / 2.0;
    let observed = ranks[..na].iter().sum::<f64>() - offset;
    let dev = (observed - mean).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let rs: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        if ((rs - offset) - mean).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    Ok(TestResult::new(TestKind::MannWhitney, observed, hits as f64 / total as f64))
}

/// Two-sided p-value from the normal approximation with tie and continuity
/// corrections.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<TestResult, AnalysisError> {
    check_groups(a, b)?;
    let u = u_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)).max(1.0));
    if var <= 0.0 {
        return Ok(TestResult::new(TestKind::MannWhitney, u, 1.0));
    }
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::standard();
    Ok(TestResult::new(TestKind::MannWhitney, u, 2.0 * (1.0 - std.cdf(z))))
}

/// Mann-Whitney U test of `a` against `b`; exact when the pooled size is at
/// most [`EXACT_LIMIT`].
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult, AnalysisError> {
    if a.len() + b.len() <= EXACT_LIMIT {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// One-sample t-test of paired differences against zero, two-sided.
pub fn paired_t(diffs: &[f64]) -> Result<TestResult, AnalysisError> {
    if diffs.len() < 2 {
        return Err(AnalysisError::TooFew(diffs.len()));
    }
    if diffs.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TestResult::new(TestKind::PairedT, t, p))
}

/// Corrected per-test threshold `base_alpha / k`.
pub fn bonferroni_threshold(base_alpha: f64, k: usize) -> f64 {
    base_alpha / k.max(1) as f64
}

/// Flags each result significant iff `p < base_alpha / k`.
pub fn bonferroni(results: &mut [TestResult], base_alpha: f64, k: usize) {
    let threshold = bonferroni_threshold(base_alpha, k);
    for r in results {
        r.significant_after_bonferroni = r.p_value < threshold;
    }
}
