use std::fmt::Write as _;
use std::path::PathBuf;

use super::config::ExperimentConfig;
use super::metrics::AggregateRow;
use super::run::run_experiment_in;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub struct SweepPoint {
    pub value: String,
    pub seed: u64,
    pub c: f64,
    pub dir: PathBuf,
    /// Mean metrics at the last recorded iteration; `None` if a replica diverged.
    pub last: Option<AggregateRow>,
    pub diverged: bool,
}

pub struct SweepSummary {
    pub dir: PathBuf,
    pub points: Vec<SweepPoint>,
}

/// Runs `base` once per value of `axis`. Point `i` uses the seed
/// `derive_seed(base.seed, i)` unless the axis is the seed itself; the data
/// seed stays that of `base`.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String]) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let root = base.output_root().join(format!("{}-sweep-{axis}", base.label()));
    let mut points = Vec::with_capacity(values.len());
    for (i, value) in values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.problem.seed = Some(base.data_seed());
        cfg.set_axis(axis, value)?;
        if axis != "seed" {
            cfg.seed = derive_seed(base.seed, i as u64);
        }
        cfg.name = Some(format!("{axis}={}", value.trim()));
        let summary = run_experiment_in(&cfg, &root)?;
        points.push(SweepPoint {
            value: value.trim().to_string(),
            seed: cfg.seed,
            c: summary.c,
            dir: summary.dir,
            last: summary.aggregate.last().cloned(),
            diverged: !summary.failures.is_empty(),
        });
    }
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("sweep.csv"), sweep_csv(axis, &points))?;
    Ok(SweepSummary { dir: root, points })
}

pub fn sweep_csv(axis: &str, points: &[SweepPoint]) -> String {
    let mut s = format!("{axis},seed,c_param,status,k,suboptimality_mean,consensus_err_mean,bits_cum_mean,grad_evals_cum_mean\n");
    for p in points {
        let status = if p.diverged { "diverged" } else { "ok" };
        let _ = write!(s, "{},{},{:?},{status}", p.value, p.seed, p.c);
        match &p.last {
            Some(r) => {
                let _ = writeln!(s, ",{},{:?},{:?},{:?},{:?}", r.k, r.mean[0], r.mean[1], r.mean[3], r.mean[4]);
            }
            None => s.push_str(",,,,,\n"),
        }
    }
    s
}
