//! One experiment per grid point along a single axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentSpec, HarnessError};
use crate::model::Task;
use crate::patterns::LAMBDA_GRID;

pub const ALPHA0_GRID: [f64; 3] = [1.0, 10.0, 100.0];
pub const FRACTION_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lambda,
    Alpha0,
    Fraction,
}

impl SweepAxis {
    pub fn grid(self) -> Vec<f64> {
        match self {
            SweepAxis::Lambda => LAMBDA_GRID.to_vec(),
            SweepAxis::Alpha0 => ALPHA0_GRID.to_vec(),
            SweepAxis::Fraction => FRACTION_GRID.to_vec(),
        }
    }

    fn apply(self, spec: &mut ExperimentSpec, v: f64) {
        match self {
            SweepAxis::Lambda => spec.hyper.lambda = v,
            SweepAxis::Alpha0 => spec.hyper.alpha0 = v,
            SweepAxis::Fraction => spec.train_fraction = v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Alpha0 => "alpha0",
            SweepAxis::Fraction => "fraction",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "alpha0" => Ok(SweepAxis::Alpha0),
            "fraction" => Ok(SweepAxis::Fraction),
            _ => Err(format!("unknown sweep axis {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub train_size: usize,
    pub eval_size: usize,
    pub baseline_accuracy: f64,
    pub guided_accuracy: f64,
    pub baseline_f1: Option<f64>,
    pub guided_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub task: Task,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const HEADER: &'static str = "axis,value,train_size,eval_size,baseline_accuracy,guided_accuracy";

    /// F1 columns are added for the clone task; an undefined F1 is left
    /// empty.
    pub fn to_csv(&self) -> String {
        let clone = self.task == Task::Clone;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(Self::HEADER);
        if clone {
            s.push_str(",baseline_f1,guided_f1");
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}",
                self.axis, r.value, r.train_size, r.eval_size, r.baseline_accuracy, r.guided_accuracy
            ));
            if clone {
                s.push_str(&format!(",{},{}", opt(r.baseline_f1), opt(r.guided_f1)));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `spec` at every value of `grid` (the axis default when `None`),
/// sharing all seeds. Metrics are means over folds; sizes are from the
/// first fold.
pub fn sweep(spec: &ExperimentSpec, axis: SweepAxis, grid: Option<&[f64]>) -> Result<SweepTable, HarnessError> {
    let values = grid.map(<[f64]>::to_vec).unwrap_or_else(|| axis.grid());
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut point = spec.clone();
        axis.apply(&mut point, v);
        let out = run_experiment(&point)?;
        let (baseline_accuracy, guided_accuracy) = out.mean_accuracy();
        let (baseline_f1, guided_f1) = out.mean_f1();
        rows.push(SweepRow {
            value: v,
            train_size: out.folds[0].train_size,
            eval_size: out.folds[0].eval_size,
            baseline_accuracy,
            guided_accuracy,
            baseline_f1,
            guided_f1,
        });
    }
    Ok(SweepTable {
        axis,
        task: spec.task,
        rows,
    })
}
