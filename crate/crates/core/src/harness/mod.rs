//! Experiment orchestration: configuration, runs, sweeps, comparisons and CSV output.

mod compare;
mod config;
mod metrics;
mod reference;
mod run;
mod sweep;

pub use compare::{align, aligned_csv, compare, Alignment, BudgetAxis, CompareSummary, Curve};
pub use config::{
    AlgorithmConfig, CompressorConfig, ExperimentConfig, OracleConfig, OracleKindConfig, ProblemConfig, ProblemKindConfig,
    TopologyConfig, OUT_DIR_ENV, SWEEP_AXES,
};
pub use metrics::{
    aggregate, aggregate_header, parse_aggregate_csv, parse_csv, write_aggregate_csv, write_csv, AggregateRow, MetricsRow,
    CSV_HEADER, METRICS,
};
pub use reference::{cached_reference, reference_path, REFERENCE_TOL};
pub use run::{prepare, run_checked, run_experiment, run_experiment_in, simulate, Prepared, ReplicaRun, RunSummary, EXPANSION_TOL};
pub use sweep::{sweep, sweep_csv, SweepPoint, SweepSummary};

use std::fmt::Write as _;

use crate::compression::{estimate_c, CEstimate};
use crate::error::Result;
use crate::rng::{stream, Purpose};
use rand_distr::{Distribution, StandardNormal};

/// Monte-Carlo noise-to-signal estimate of the configured compressor on
/// standard Gaussian vectors of the problem dimension.
pub fn estimate_c_for(cfg: &ExperimentConfig, vectors: usize, trials: usize) -> Result<(CEstimate, f64)> {
    let spec = cfg.compressor.build()?;
    let p = cfg.problem.p;
    let mut rng = stream(cfg.seed, 0, Purpose::Estimate);
    let est = estimate_c(&spec, |r| (0..p).map(|_| StandardNormal.sample(r)).collect(), vectors, trials, &mut rng)?;
    Ok((est, spec.analytic_c(p)))
}

pub fn estimate_c_csv(est: &CEstimate) -> String {
    let mut s = String::from("vector,noise_to_signal,bias_norm,max_bias_z\n");
    for (i, v) in est.per_vector.iter().enumerate() {
        let _ = writeln!(s, "{i},{:?},{:?},{:?}", v.noise_to_signal, v.bias_norm, v.max_bias_z);
    }
    s
}
