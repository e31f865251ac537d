use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{aggregate, write_aggregate_csv, write_csv, AggregateRow, MetricsRow};
use super::reference::cached_reference;
use crate::algorithms::{
    check_invariants, dgd_step, initialize, lead_step, expansion_residual, lyapunov, nids_step, prox_lead_step, rho_cor6,
    rho_fixed, rho_lsvrg, rho_saga, select_params, Algorithm, AlgorithmState, ParamInputs, ParamSource, Params, Setup,
    StepParams, Streams,
};
use crate::compression::CompressorSpec;
use crate::error::{Error, Result};
use crate::oracle::{OracleKind, OracleState};
use crate::problem::{generate_synthetic, CompositeProblem, ReferenceSolution};
use crate::topology::Network;

/// Largest accepted one-step expansion residual when invariant checking is on.
pub const EXPANSION_TOL: f64 = 1e-10;

/// A configuration resolved into concrete objects.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub prob: CompositeProblem,
    pub net: Network,
    pub compressor: CompressorSpec,
    pub oracle_kind: OracleKind,
    pub algorithm: Algorithm,
    pub source: ParamSource,
    pub params: Params,
    /// Noise-to-signal constant used for the parameters; 0 for uncompressed methods.
    pub c: f64,
    pub nids_lambda: f64,
    pub reference: ReferenceSolution,
}

impl Prepared {
    /// Parameters the Lyapunov function is evaluated with at iteration `k`.
    pub fn lyapunov_params(&self, k: usize) -> StepParams {
        let sp = self.params.at(k);
        match self.algorithm {
            Algorithm::Nids => StepParams { eta: sp.eta, alpha: 1.0, gamma: self.nids_lambda * sp.eta },
            _ => sp,
        }
    }

    /// Theoretical per-iteration contraction factor for this configuration, if one applies.
    pub fn rho_bound(&self) -> Option<f64> {
        let (mu, _) = self.prob.constants();
        let spectral = self.net.spectral();
        if !self.params.is_fixed() || !self.algorithm.compresses() {
            return None;
        }
        match (self.source, self.oracle_kind) {
            (ParamSource::Thm8, OracleKind::Lsvrg { refresh }) => Some(rho_lsvrg(self.c, self.prob.kappa_f(), &spectral, refresh)),
            (ParamSource::Thm9, OracleKind::Saga) => Some(rho_saga(self.c, self.prob.kappa_f(), &spectral, self.prob.m())),
            (ParamSource::Cor6, _) => Some(rho_cor6(mu, self.params.base.eta, &spectral)),
            _ => Some(rho_fixed(mu, self.c, self.params.base, &spectral)),
        }
    }
}

/// Builds problem, network and parameters, and the reference solution
/// (through `cache_dir` when given).
pub fn prepare(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Prepared> {
    cfg.check()?;
    let net = cfg.topology.build()?;
    let prob = generate_synthetic(&cfg.synthetic_spec())?;
    let compressor = cfg.compressor.build()?;
    let algorithm = cfg.algorithm.algorithm()?;
    let source = cfg.algorithm.source()?;
    let oracle_kind = cfg.oracle.build(prob.m());
    let c = if algorithm.compresses() { compressor.c_param(prob.p()) } else { 0.0 };
    let (mu, l) = prob.constants();
    let inputs = ParamInputs {
        mu,
        l,
        c,
        spectral: net.spectral(),
        m: prob.m(),
        lsvrg_p: cfg.oracle.lsvrg_p(prob.m()),
        eta: cfg.algorithm.eta,
    };
    let mut params = select_params(source, &inputs)?;
    if cfg.algorithm.alpha.is_some() || cfg.algorithm.gamma.is_some() {
        if !params.is_fixed() {
            return Err(Error::Config("alpha/gamma overrides need a fixed-parameter source".into()));
        }
        if let Some(a) = cfg.algorithm.alpha {
            params.base.alpha = a;
        }
        if let Some(g) = cfg.algorithm.gamma {
            params.base.gamma = g;
        }
        params.validate(&net.spectral())?;
    }
    let nids_lambda = cfg.algorithm.nids_lambda.unwrap_or(1.0);
    if !(nids_lambda > 0.0) {
        return Err(Error::Config(format!("nids_lambda = {nids_lambda} must be positive")));
    }
    let reference = cached_reference(&prob, cfg, params.base.eta, cache_dir)?;
    Ok(Prepared { cfg: cfg.clone(), prob, net, compressor, oracle_kind, algorithm, source, params, c, nids_lambda, reference })
}

/// Rows recorded by one replica, and how it ended.
pub struct ReplicaRun {
    pub rows: Vec<MetricsRow>,
    pub outcome: Result<()>,
}

fn consensus_err(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut sq = 0.0;
    for col in x.column_iter() {
        let mean = col.sum() / n;
        sq += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    sq.sqrt()
}

fn record(
    prep: &Prepared,
    st: &AlgorithmState,
    oracle: &OracleState,
    k: usize,
    started: Option<Instant>,
) -> Result<MetricsRow> {
    let n = prep.prob.n() as f64;
    let suboptimality = (&st.x - &prep.reference.x_star_mat).norm_squared() / n;
    let phi = if prep.algorithm == Algorithm::Dgd {
        f64::NAN
    } else {
        lyapunov(st, &prep.reference, &prep.prob, &prep.net, Some(oracle), prep.lyapunov_params(k), prep.c)?.phi
    };
    Ok(MetricsRow {
        k,
        suboptimality,
        consensus_err: consensus_err(&st.x),
        phi,
        bits_cum: st.bits_sent,
        grad_evals_cum: oracle.grad_evals(),
        wall_ns: started.map_or(0, |t| t.elapsed().as_nanos() as u64),
    })
}

/// Runs one replica in memory.
pub fn simulate(prep: &Prepared, replica: u32) -> ReplicaRun {
    let mut rows = Vec::new();
    let outcome = simulate_into(prep, replica, &mut rows);
    ReplicaRun { rows, outcome }
}

fn simulate_into(prep: &Prepared, replica: u32, rows: &mut Vec<MetricsRow>) -> Result<()> {
    let cfg = &prep.cfg;
    if cfg.iterations == 0 {
        return Ok(());
    }
    let started = cfg.record_wall_time.then(Instant::now);
    let setup = Setup { prob: &prep.prob, net: &prep.net, compressor: &prep.compressor };
    let mut streams = Streams::new(cfg.seed, replica);
    let x0 = DMatrix::zeros(prep.prob.n(), prep.prob.p());
    let init_alg = if prep.algorithm == Algorithm::Lead { Algorithm::Lead } else { Algorithm::ProxLead };
    let (mut st, mut oracle) = initialize(init_alg, setup, prep.oracle_kind, &x0, prep.params.at(0), &mut streams)?;
    rows.push(record(prep, &st, &oracle, 0, started)?);
    let mut reference = prep.reference.clone();
    for k in 1..=cfg.iterations {
        let sp = prep.params.at(k);
        let prev = cfg.check_invariants.then(|| (st.x.clone(), st.d.clone()));
        match prep.algorithm {
            Algorithm::ProxLead => prox_lead_step(&mut st, setup, &mut oracle, sp, &mut streams)?,
            Algorithm::Lead => lead_step(&mut st, setup, &mut oracle, sp, &mut streams)?,
            Algorithm::Nids => nids_step(&mut st, &prep.prob, &prep.net, &mut oracle, sp.eta, prep.nids_lambda, &mut streams)?,
            Algorithm::Dgd => dgd_step(&mut st, &prep.prob, &prep.net, &mut oracle, sp.eta, &mut streams)?,
        }
        if let Some((x, d)) = prev {
            if prep.algorithm != Algorithm::Dgd {
                if reference.eta != sp.eta {
                    reference = prep.reference.with_eta(&prep.prob, sp.eta)?;
                }
                let res = expansion_residual(&x, &d, &st.g, &st.z, &reference, sp.eta);
                if !(res <= EXPANSION_TOL) {
                    return Err(Error::StateCorruption(format!("one-step expansion residual {res:e} at k = {k}")));
                }
                check_invariants(&st, &prep.net)?;
            }
        }
        if k % cfg.metrics_stride == 0 || k == cfg.iterations {
            rows.push(record(prep, &st, &oracle, k, started)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    label: String,
    config_hash: String,
    problem_hash: String,
    instance_hash: String,
    algorithm: &'a str,
    params_source: &'a str,
    schedule: &'static str,
    eta: f64,
    alpha: f64,
    gamma: f64,
    c: f64,
    mu: f64,
    l: f64,
    kappa_f: f64,
    lam_max: f64,
    lam_min_nz: f64,
    kappa_g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_bound: Option<f64>,
    obj_star: f64,
    reference_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dgd_regularizer: Option<&'static str>,
    replicas: u32,
    diverged_replicas: Vec<u32>,
}

/// What a finished run produced.
pub struct RunSummary {
    pub dir: PathBuf,
    pub label: String,
    pub hash: String,
    pub replicas: Vec<Vec<MetricsRow>>,
    pub aggregate: Vec<AggregateRow>,
    pub c: f64,
    /// Replicas that stopped early, with the reason.
    pub failures: Vec<(u32, Error)>,
}

/// Runs all replicas of `cfg` under `out_root/<label>/`, using
/// `out_root/cache` for reference solutions.
pub fn run_experiment_in(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg, Some(&out_root.join("cache")))?;
    let runs: Vec<ReplicaRun> = (0..cfg.replicas).into_par_iter().map(|r| simulate(&prep, r)).collect();
    let label = cfg.label();
    let dir = out_root.join(cfg.run_dir_name());
    std::fs::create_dir_all(&dir)?;
    let mut replicas = Vec::with_capacity(runs.len());
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        std::fs::write(dir.join(format!("replica-{r:03}.csv")), write_csv(&run.rows))?;
        if let Err(e) = run.outcome {
            failures.push((r as u32, e));
        }
        replicas.push(run.rows);
    }
    let agg = if failures.is_empty() { aggregate(&replicas)? } else { Vec::new() };
    if cfg.replicas > 1 && failures.is_empty() {
        std::fs::write(dir.join("aggregate.csv"), write_aggregate_csv(&agg))?;
    }
    std::fs::write(dir.join("config.toml"), cfg.canonical())?;
    let spectral = prep.net.spectral();
    let (mu, l) = prep.prob.constants();
    let meta = Meta {
        label: label.clone(),
        config_hash: cfg.hash(),
        problem_hash: cfg.problem_hash(),
        instance_hash: cfg.instance_hash(),
        algorithm: prep.algorithm.name(),
        params_source: prep.source.name(),
        schedule: if prep.params.is_fixed() { "fixed" } else { "diminishing" },
        eta: prep.params.base.eta,
        alpha: prep.params.base.alpha,
        gamma: prep.params.base.gamma,
        c: prep.c,
        mu,
        l,
        kappa_f: prep.prob.kappa_f(),
        lam_max: spectral.lam_max,
        lam_min_nz: spectral.lam_min_nz,
        kappa_g: spectral.kappa_g,
        rho_bound: prep.rho_bound(),
        obj_star: prep.reference.obj_star,
        reference_tol: prep.reference.tol,
        dgd_regularizer: (prep.algorithm == Algorithm::Dgd && !prep.prob.regularizer().is_zero())
            .then_some("proximal-convention"),
        replicas: cfg.replicas,
        diverged_replicas: failures.iter().map(|(r, _)| *r).collect(),
    };
    std::fs::write(dir.join("meta.toml"), toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?)?;
    Ok(RunSummary { dir, label, hash: cfg.hash(), replicas, aggregate: agg, c: prep.c, failures })
}

/// [`run_experiment_in`] under [`ExperimentConfig::output_root`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_experiment_in(cfg, &cfg.output_root())
}

/// Like [`run_experiment`], but the first replica failure becomes the error.
pub fn run_checked(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let mut summary = run_experiment(cfg)?;
    if summary.failures.is_empty() {
        Ok(summary)
    } else {
        Err(summary.failures.swap_remove(0).1)
    }
}
