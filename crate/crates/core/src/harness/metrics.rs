//! Metrics rows and their CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "k,suboptimality,consensus_err,phi,bits_cum,grad_evals_cum,wall_ns";

/// Metric columns that get a mean and standard error in aggregates.
pub const METRICS: [&str; 6] = ["suboptimality", "consensus_err", "phi", "bits_cum", "grad_evals_cum", "wall_ns"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub k: usize,
    /// `‖X - X*‖²_F / n`.
    pub suboptimality: f64,
    /// `‖X - 1x̄ᵀ‖_F`.
    pub consensus_err: f64,
    /// Lyapunov value; NaN for DGD.
    pub phi: f64,
    pub bits_cum: u64,
    pub grad_evals_cum: u64,
    pub wall_ns: u64,
}

impl MetricsRow {
    fn values(&self) -> [f64; 6] {
        [
            self.suboptimality,
            self.consensus_err,
            self.phi,
            self.bits_cum as f64,
            self.grad_evals_cum as f64,
            self.wall_ns as f64,
        ]
    }

    /// Value of `metric`, one of [`METRICS`] or `k`.
    pub fn get(&self, metric: &str) -> Option<f64> {
        if metric == "k" {
            return Some(self.k as f64);
        }
        METRICS.iter().position(|m| *m == metric).map(|i| self.values()[i])
    }
}

pub fn write_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{},{},{}",
            r.k, r.suboptimality, r.consensus_err, r.phi, r.bits_cum, r.grad_evals_cum, r.wall_ns
        );
    }
    s
}

fn field<T: std::str::FromStr>(line: usize, v: Option<&str>) -> Result<T> {
    v.and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Config(format!("metrics csv line {line}: bad or missing field")))
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Config(format!("unexpected metrics header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut it = line.split(',');
        let ln = i + 2;
        rows.push(MetricsRow {
            k: field(ln, it.next())?,
            suboptimality: field(ln, it.next())?,
            consensus_err: field(ln, it.next())?,
            phi: field(ln, it.next())?,
            bits_cum: field(ln, it.next())?,
            grad_evals_cum: field(ln, it.next())?,
            wall_ns: field(ln, it.next())?,
        });
        if it.next().is_some() {
            return Err(Error::Config(format!("metrics csv line {ln}: too many fields")));
        }
    }
    Ok(rows)
}

/// Mean and standard error across replicas at one recorded iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub k: usize,
    pub mean: [f64; 6],
    pub stderr: [f64; 6],
}

impl AggregateRow {
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.mean[i])
    }
}

/// Rows must have been recorded at the same iterations in every replica.
pub fn aggregate(replicas: &[Vec<MetricsRow>]) -> Result<Vec<AggregateRow>> {
    let Some(first) = replicas.first() else {
        return Ok(Vec::new());
    };
    if replicas.iter().any(|r| r.len() != first.len()) {
        return Err(Error::Config("replicas recorded different numbers of rows".into()));
    }
    let r = replicas.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for (idx, row) in first.iter().enumerate() {
        let mut mean = [0.0; 6];
        for rep in replicas {
            if rep[idx].k != row.k {
                return Err(Error::Config(format!("replicas disagree on iteration at row {idx}")));
            }
            for (m, v) in mean.iter_mut().zip(rep[idx].values()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= r;
        }
        let mut stderr = [0.0; 6];
        if replicas.len() > 1 {
            for (j, s) in stderr.iter_mut().enumerate() {
                let ss: f64 = replicas.iter().map(|rep| (rep[idx].values()[j] - mean[j]).powi(2)).sum();
                *s = (ss / (r - 1.0)).sqrt() / r.sqrt();
            }
        }
        out.push(AggregateRow { k: row.k, mean, stderr });
    }
    Ok(out)
}

pub fn aggregate_header() -> String {
    let mut h = String::from("k");
    for m in METRICS {
        let _ = write!(h, ",{m}_mean,{m}_stderr");
    }
    h
}

pub fn write_aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = aggregate_header();
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{}", r.k);
        for j in 0..METRICS.len() {
            let _ = write!(s, ",{:?},{:?}", r.mean[j], r.stderr[j]);
        }
        s.push('\n');
    }
    s
}

pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(aggregate_header().as_str()) {
        return Err(Error::Config("unexpected aggregate header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut it = line.split(',');
        let ln = i + 2;
        let k = field(ln, it.next())?;
        let mut mean = [0.0; 6];
        let mut stderr = [0.0; 6];
        for j in 0..METRICS.len() {
            mean[j] = field(ln, it.next())?;
            stderr[j] = field(ln, it.next())?;
        }
        rows.push(AggregateRow { k, mean, stderr });
    }
    Ok(rows)
}
