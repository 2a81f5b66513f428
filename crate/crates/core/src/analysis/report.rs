//! The serialized bias report and its plot tables.

use serde::{Deserialize, Serialize};

use super::partition::{stratified_accuracy, FixAccounting, PartitionCounts, Strata};
use super::stats::{bonferroni, bonferroni_threshold, mann_whitney, paired_t, TestResult};
use super::{partition_high_low, AttentionRecord, Element};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementReport {
    pub element: String,
    pub group: String,
    pub correct: GroupStats,
    pub incorrect: GroupStats,
    /// Per-instance weights, correct against incorrect.
    pub mann_whitney: Option<TestResult>,
    /// Per-head mean weights, correct minus incorrect, paired by head.
    pub paired_t: Option<TestResult>,
    pub notes: Vec<String>,
    pub partition: PartitionCounts,
    pub strata: Strata,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonferroniInfo {
    pub base_alpha: f64,
    pub k: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub schema_version: u32,
    pub num_instances: usize,
    pub num_correct: usize,
    pub accuracy: Option<f64>,
    pub bonferroni: BonferroniInfo,
    pub elements: Vec<ElementReport>,
    pub fixes: Option<FixAccounting>,
}

fn group_stats(values: &[f64]) -> GroupStats {
    GroupStats {
        n: values.len(),
        mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
    }
}

fn per_head_means(records: &[&AttentionRecord], e: Element) -> Option<Vec<f64>> {
    let rows: Vec<&Vec<f64>> = records.iter().filter_map(|r| r.element_weights.get(&e)).collect();
    let first = rows.first()?;
    let mut sums = vec![0.0; first.len()];
    for r in &rows {
        for (s, v) in sums.iter_mut().zip(r.iter()) {
            *s += v;
        }
    }
    Some(sums.into_iter().map(|s| s / rows.len() as f64).collect())
}

fn element_report(records: &[AttentionRecord], e: Element) -> ElementReport {
    let (good, bad): (Vec<&AttentionRecord>, Vec<&AttentionRecord>) = records.iter().partition(|r| r.correct);
    let weights = |rs: &[&AttentionRecord]| rs.iter().filter_map(|r| r.overall(e)).collect::<Vec<f64>>();
    let (wg, wb) = (weights(&good), weights(&bad));
    let mut notes = Vec::new();
    let mann_whitney = match mann_whitney(&wg, &wb) {
        Ok(t) => Some(t.for_element(e.to_string())),
        Err(err) => {
            notes.push(format!("mann_whitney: {err}"));
            None
        }
    };
    let paired = match (per_head_means(&good, e), per_head_means(&bad, e)) {
        (Some(g), Some(b)) => {
            let diffs: Vec<f64> = g.iter().zip(&b).map(|(x, y)| x - y).collect();
            match paired_t(&diffs) {
                Ok(t) => Some(t.for_element(e.to_string())),
                Err(err) => {
                    notes.push(format!("paired_t: {err}"));
                    None
                }
            }
        }
        _ => {
            notes.push("paired_t: a test group is empty".into());
            None
        }
    };
    let labels = partition_high_low(records, e);
    let correct: Vec<bool> = records.iter().map(|r| r.correct).collect();
    ElementReport {
        element: e.to_string(),
        group: e.group().to_string(),
        correct: group_stats(&wg),
        incorrect: group_stats(&wb),
        mann_whitney,
        paired_t: paired,
        notes,
        partition: PartitionCounts::of(&labels),
        strata: stratified_accuracy(&correct, &labels),
    }
}

/// Runs every test for `elements` and applies a Bonferroni correction with
/// `k = elements.len()` whose corrected threshold is `corrected_threshold`.
pub fn bias_report(records: &[AttentionRecord], elements: &[Element], corrected_threshold: f64) -> BiasReport {
    let k = elements.len();
    let base_alpha = corrected_threshold * k as f64;
    let mut elems: Vec<ElementReport> = crate::exec::map(elements, |&e| element_report(records, e));
    for pick in [
        (|r: &mut ElementReport| r.mann_whitney.as_mut()) as fn(&mut ElementReport) -> Option<&mut TestResult>,
        |r: &mut ElementReport| r.paired_t.as_mut(),
    ] {
        let mut family: Vec<TestResult> = elems.iter_mut().filter_map(|r| pick(r).cloned()).collect();
        bonferroni(&mut family, base_alpha, k);
        let mut flags = family.into_iter();
        for r in elems.iter_mut() {
            if let Some(t) = pick(r) {
                *t = flags.next().expect("one flag per test");
            }
        }
    }
    let num_correct = records.iter().filter(|r| r.correct).count();
    BiasReport {
        schema_version: REPORT_SCHEMA_VERSION,
        num_instances: records.len(),
        num_correct,
        accuracy: (!records.is_empty()).then(|| num_correct as f64 / records.len() as f64),
        bonferroni: BonferroniInfo {
            base_alpha,
            k,
            threshold: bonferroni_threshold(base_alpha, k),
        },
        elements: elems,
        fixes: None,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BiasReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plot tables keyed by file name, each with columns
    /// `element,group,mean,p`: mean attention of correct and incorrect
    /// predictions per element family, and accuracy of the high and low
    /// strata.
    pub fn plot_csvs(&self) -> Vec<(String, String)> {
        let header = "element,group,mean,p\n";
        let mut out = Vec::new();
        for family in ["syntax", "ast"] {
            let mut bias = String::from(header);
            let mut strata = String::from(header);
            for e in self.elements.iter().filter(|e| e.group == family) {
                let p = opt(e.mann_whitney.as_ref().map(|t| t.p_value));
                bias.push_str(&format!("{},correct,{},{}\n", e.element, opt(e.correct.mean), p));
                bias.push_str(&format!("{},incorrect,{},{}\n", e.element, opt(e.incorrect.mean), p));
                strata.push_str(&format!("{},high,{},\n", e.element, opt(e.strata.acc_high)));
                strata.push_str(&format!("{},low,{},\n", e.element, opt(e.strata.acc_low)));
            }
            out.push((format!("bias_{family}.csv"), bias));
            out.push((format!("strata_{family}.csv"), strata));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::SyntaxClass;
    use std::collections::BTreeMap;

    fn rec(correct: bool, w: f64) -> AttentionRecord {
        let e = Element::Syntax(SyntaxClass::Identifier);
        AttentionRecord {
            unit_id: "r".into(),
            num_layers: 1,
            heads: 2,
            correct,
            token_weights: vec![vec![w]; 2],
            element_weights: BTreeMap::from([(e, vec![w, w * 0.5 + 0.1 * correct as u8 as f64])]),
        }
    }

    #[test]
    fn report_fields() {
        let recs: Vec<_> = (0..10).map(|i| rec(i % 2 == 0, i as f64 / 10.0)).collect();
        let elems = Element::all();
        let r = bias_report(&recs, &elems, 0.01);
        assert_eq!(r.num_instances, 10);
        assert_eq!(r.num_correct, 5);
        assert_eq!(r.bonferroni.k, 12);
        assert!((r.bonferroni.threshold - 0.01).abs() < 1e-15);
        let ident = &r.elements[0];
        assert_eq!(ident.element, "syntax:identifier");
        assert_eq!(ident.correct.n, 5);
        assert!(ident.mann_whitney.is_some());
        assert_eq!(ident.partition.total(), 10);
        let absent = &r.elements[1];
        assert!(absent.mann_whitney.is_none());
        assert!(!absent.notes.is_empty());
        assert_eq!(absent.partition.excluded, 10);
        let csvs = r.plot_csvs();
        assert_eq!(csvs.len(), 4);
        assert_eq!(csvs[0].1.lines().count(), 1 + 2 * 8);
        assert!(serde_json::from_str::<BiasReport>(&r.to_json()).is_ok());
    }
}
