use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::metrics::AggregateRow;
use super::run::run_experiment_in;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetAxis {
    Iterations,
    Bits,
    GradEvals,
}

impl BudgetAxis {
    pub fn name(&self) -> &'static str {
        match self {
            BudgetAxis::Iterations => "iterations",
            BudgetAxis::Bits => "bits",
            BudgetAxis::GradEvals => "grad_evals",
        }
    }

    fn of(&self, row: &AggregateRow) -> f64 {
        match self {
            BudgetAxis::Iterations => row.k as f64,
            BudgetAxis::Bits => row.mean[3],
            BudgetAxis::GradEvals => row.mean[4],
        }
    }
}

impl FromStr for BudgetAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" | "k" => Ok(BudgetAxis::Iterations),
            "bits" => Ok(BudgetAxis::Bits),
            "grad_evals" => Ok(BudgetAxis::GradEvals),
            _ => Err(Error::Config(format!("unknown budget axis {s:?}"))),
        }
    }
}

/// One curve: budget values (nondecreasing) and the metrics carried along.
#[derive(Clone, Debug)]
pub struct Curve {
    pub label: String,
    pub budget: Vec<f64>,
    pub suboptimality: Vec<f64>,
    pub consensus_err: Vec<f64>,
}

impl Curve {
    pub fn from_rows(label: &str, axis: BudgetAxis, rows: &[AggregateRow]) -> Self {
        Self {
            label: label.to_string(),
            budget: rows.iter().map(|r| axis.of(r)).collect(),
            suboptimality: rows.iter().map(|r| r.mean[0]).collect(),
            consensus_err: rows.iter().map(|r| r.mean[1]).collect(),
        }
    }

    /// Index of the last row with budget `<= b`.
    fn step_index(&self, b: f64) -> Option<usize> {
        let pos = self.budget.partition_point(|&v| v <= b);
        pos.checked_sub(1)
    }
}

/// Aligned table: grid values and, per curve, the row index used at each grid point.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub grid: Vec<f64>,
    pub index: Vec<Vec<usize>>,
}

/// Aligns curves on the union of their budget values inside the shared range,
/// carrying each curve's last value forward between its own rows.
pub fn align(curves: &[Curve]) -> Result<Alignment> {
    if curves.iter().any(|c| c.budget.is_empty()) {
        return Err(Error::Config("cannot align an empty curve".into()));
    }
    let lo = curves.iter().map(|c| c.budget[0]).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().map(|c| *c.budget.last().unwrap()).fold(f64::INFINITY, f64::min);
    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.budget.iter().copied()).filter(|&b| b >= lo && b <= hi).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let index = curves
        .iter()
        .map(|c| grid.iter().map(|&b| c.step_index(b).expect("grid starts inside every curve")).collect())
        .collect();
    Ok(Alignment { grid, index })
}

pub fn aligned_csv(axis: BudgetAxis, curves: &[Curve], al: &Alignment) -> String {
    let mut s = String::from(axis.name());
    for c in curves {
        let _ = write!(s, ",{0}_suboptimality,{0}_consensus_err", c.label);
    }
    s.push('\n');
    for (g, &b) in al.grid.iter().enumerate() {
        let _ = write!(s, "{b:?}");
        for (c, idx) in curves.iter().zip(&al.index) {
            let i = idx[g];
            let _ = write!(s, ",{:?},{:?}", c.suboptimality[i], c.consensus_err[i]);
        }
        s.push('\n');
    }
    s
}

pub struct CompareSummary {
    pub path: PathBuf,
    pub curves: Vec<Curve>,
    pub alignment: Alignment,
}

/// Runs every configuration and writes one table aligned on `axis`.
/// All configurations must share the same problem and network.
pub fn compare(configs: &[(String, ExperimentConfig)], axis: BudgetAxis) -> Result<CompareSummary> {
    let Some((_, first)) = configs.first() else {
        return Err(Error::Config("compare needs at least one configuration".into()));
    };
    let instance = first.instance_hash();
    if let Some((label, _)) = configs.iter().find(|(_, c)| c.instance_hash() != instance) {
        return Err(Error::Config(format!("configuration {label:?} uses a different problem or network")));
    }
    let root = first.output_root().join(format!("compare-{instance}"));
    let mut curves = Vec::with_capacity(configs.len());
    for (label, cfg) in configs {
        let mut cfg = cfg.clone();
        cfg.name = Some(label.clone());
        let summary = run_experiment_in(&cfg, &root)?;
        if let Some((r, e)) = summary.failures.into_iter().next() {
            return Err(match e {
                Error::Divergence { k, reason } => Error::Divergence { k, reason: format!("{label} replica {r}: {reason}") },
                other => other,
            });
        }
        curves.push(Curve::from_rows(label, axis, &summary.aggregate));
    }
    let alignment = align(&curves)?;
    let path = root.join(format!("compare-{}.csv", axis.name()));
    std::fs::write(&path, aligned_csv(axis, &curves, &alignment))?;
    Ok(CompareSummary { path, curves, alignment })
}
