//! High/low attention partitioning, stratified accuracy, fix accounting and
//! classification metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    High,
    Low,
    Excluded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub high: usize,
    pub low: usize,
    pub excluded: usize,
}

impl PartitionCounts {
    pub fn of(labels: &[Partition]) -> Self {
        let mut c = Self::default();
        for l in labels {
            match l {
                Partition::High => c.high += 1,
                Partition::Low => c.low += 1,
                Partition::Excluded => c.excluded += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.high + self.low + self.excluded
    }
}

fn mean_from_min(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    // Offsetting by the minimum keeps the mean of identical values exact.
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - min), n + 1));
    (n > 0).then(|| min + sum / n as f64)
}

fn majority(high: usize, low: usize) -> Partition {
    match high.cmp(&low) {
        std::cmp::Ordering::Greater => Partition::High,
        std::cmp::Ordering::Less => Partition::Low,
        std::cmp::Ordering::Equal => Partition::Excluded,
    }
}

/// Three-stage labelling over `weights[instance][layer][head]`; `None` marks
/// an instance that lacks the element.
///
/// Each layer's threshold is the mean of its weights over every present
/// instance and head. A head is high when strictly above the threshold; a
/// layer is high when more than half its heads are high, low when fewer, and
/// left out on an even split; an instance is High or Low by majority of its
/// remaining layers and Excluded on a tie.
pub fn partition_tensor(weights: &[Option<Vec<Vec<f64>>>]) -> Vec<Partition> {
    let present: Vec<&Vec<Vec<f64>>> = weights.iter().flatten().collect();
    let Some(first) = present.first() else {
        return vec![Partition::Excluded; weights.len()];
    };
    let num_layers = first.len();
    let thresholds: Vec<f64> = (0..num_layers)
        .map(|l| {
            mean_from_min(present.iter().flat_map(|w| w[l].iter().copied())).unwrap_or(0.0)
        })
        .collect();
    weights
        .iter()
        .map(|w| {
            let Some(w) = w else {
                return Partition::Excluded;
            };
            let (mut hi, mut lo) = (0, 0);
            for (layer, &t) in w.iter().zip(&thresholds) {
                let above = layer.iter().filter(|&&x| x > t).count();
                match majority(above, layer.len() - above) {
                    Partition::High => hi += 1,
                    Partition::Low => lo += 1,
                    Partition::Excluded => {}
                }
            }
            majority(hi, lo)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub acc_high: Option<f64>,
    pub acc_low: Option<f64>,
    pub n_high: usize,
    pub n_low: usize,
}

/// Accuracy within the High and Low strata; an empty stratum has no
/// accuracy.
pub fn stratified_accuracy(correct: &[bool], labels: &[Partition]) -> Strata {
    let acc = |want: Partition| {
        let hits: Vec<bool> = correct
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == want)
            .map(|(c, _)| *c)
            .collect();
        let n = hits.len();
        let a = (n > 0).then(|| hits.iter().filter(|&&c| c).count() as f64 / n as f64);
        (a, n)
    };
    let (acc_high, n_high) = acc(Partition::High);
    let (acc_low, n_low) = acc(Partition::Low);
    Strata {
        acc_high,
        acc_low,
        n_high,
        n_low,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixAccounting {
    pub total: usize,
    pub correct_baseline: usize,
    pub correct_guided: usize,
    pub wrong_baseline: usize,
    pub fixed: usize,
    pub broken: usize,
    /// `fixed / wrong_baseline`; absent when the baseline made no mistakes.
    pub fix_pct: Option<f64>,
}

pub fn fix_accounting<T: PartialEq>(baseline: &[T], guided: &[T], targets: &[T]) -> FixAccounting {
    assert!(
        baseline.len() == targets.len() && guided.len() == targets.len(),
        "prediction and target lengths differ"
    );
    let mut f = FixAccounting {
        total: targets.len(),
        correct_baseline: 0,
        correct_guided: 0,
        wrong_baseline: 0,
        fixed: 0,
        broken: 0,
        fix_pct: None,
    };
    for ((b, g), t) in baseline.iter().zip(guided).zip(targets) {
        let (bc, gc) = (b == t, g == t);
        f.correct_baseline += bc as usize;
        f.correct_guided += gc as usize;
        f.wrong_baseline += !bc as usize;
        f.fixed += (!bc && gc) as usize;
        f.broken += (bc && !gc) as usize;
    }
    f.fix_pct = (f.wrong_baseline > 0).then(|| f.fixed as f64 / f.wrong_baseline as f64);
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Binary classification metrics with `true` as the positive class.
pub fn metrics(preds: &[bool], targets: &[bool]) -> Metrics {
    assert_eq!(preds.len(), targets.len(), "prediction and target lengths differ");
    let (mut tp, mut fp, mut fn_, mut hit) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in preds.iter().zip(targets) {
        hit += (p == t) as usize;
        tp += (p && t) as usize;
        fp += (p && !t) as usize;
        fn_ += (!p && t) as usize;
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics {
        accuracy: ratio(hit, preds.len()),
        precision,
        recall,
        f1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handcrafted_high_low() {
        let w = vec![
            Some(vec![vec![0.9, 0.8], vec![0.7, 0.9]]),
            Some(vec![vec![0.1, 0.2], vec![0.1, 0.0]]),
        ];
        assert_eq!(partition_tensor(&w), [Partition::High, Partition::Low]);
    }

    #[test]
    fn all_equal_is_all_low() {
        let w = vec![Some(vec![vec![0.1; 4]; 3]); 7];
        assert!(partition_tensor(&w).iter().all(|&p| p == Partition::Low));
    }

    #[test]
    fn even_head_split_is_excluded() {
        let w = vec![
            Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            Some(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        ];
        assert_eq!(partition_tensor(&w), [Partition::Excluded, Partition::Excluded]);
        assert_eq!(partition_tensor(&[None]), [Partition::Excluded]);
    }

    #[test]
    fn strata_and_empty_stratum() {
        let s = stratified_accuracy(&[true, false, true], &[Partition::High, Partition::High, Partition::Excluded]);
        assert_eq!(s.acc_high, Some(0.5));
        assert_eq!(s.acc_low, None);
        assert_eq!(s.n_low, 0);
    }

    #[test]
    fn fix_example() {
        let targets = [1, 1, 1, 1];
        let baseline = [0, 0, 0, 1];
        let guided = [0, 1, 1, 1];
        let f = fix_accounting(&baseline, &guided, &targets);
        assert_eq!((f.fixed, f.broken, f.wrong_baseline), (2, 0, 3));
        assert!((f.fix_pct.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let same = fix_accounting(&baseline, &baseline, &targets);
        assert_eq!((same.fixed, same.broken), (0, 0));
    }

    #[test]
    fn metric_cases() {
        let mut preds = vec![true; 10];
        preds.extend([false; 2]);
        let mut targets = vec![true; 8];
        targets.extend([false, false, true, true]);
        let m = metrics(&preds, &targets);
        assert!((m.precision.unwrap() - 0.8).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.8).abs() < 1e-12);
        assert!((m.f1.unwrap() - 0.8).abs() < 1e-12);
        let none = metrics(&[false, false], &[true, false]);
        assert_eq!(none.precision, None);
        assert_eq!(none.f1, None);
        let all = metrics(&[true, false], &[true, false]);
        assert_eq!(all.accuracy, Some(1.0));
        assert_eq!(all.f1, Some(1.0));
    }
}
