//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{Algorithm, ParamSource};
use crate::compression::CompressorSpec;
use crate::error::{Error, Result};
use crate::oracle::OracleKind;
use crate::problem::SyntheticSpec;
use crate::rng::derive_seed;
use crate::topology::{build_complete, build_from_edges, build_ring, Network};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "PROXLEAD_OUT_DIR";

fn one() -> u32 {
    1
}
fn one_usize() -> usize {
    1
}
fn third() -> f64 {
    1.0 / 3.0
}
fn unit() -> f64 {
    1.0
}
fn out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used for the output directory; defaults to `run-<hash>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub iterations: usize,
    #[serde(default = "one")]
    pub replicas: u32,
    #[serde(default = "one_usize")]
    pub metrics_stride: usize,
    #[serde(default = "out")]
    pub output: PathBuf,
    /// When false the `wall_ns` column is written as 0 so outputs stay byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Verify the per-iteration identities while running.
    #[serde(default)]
    pub check_invariants: bool,
    pub topology: TopologyConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub compressor: CompressorConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub algorithm: AlgorithmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    Ring {
        n: usize,
        #[serde(default = "third")]
        weight: f64,
    },
    Complete {
        n: usize,
    },
    /// Metropolis weights on an explicit edge list.
    Edges {
        n: usize,
        edges: Vec<[usize; 2]>,
    },
}

impl TopologyConfig {
    pub fn n(&self) -> usize {
        match self {
            TopologyConfig::Ring { n, .. } | TopologyConfig::Complete { n } | TopologyConfig::Edges { n, .. } => *n,
        }
    }

    pub fn build(&self) -> Result<Network> {
        match self {
            TopologyConfig::Ring { n, weight } => build_ring(*n, *weight),
            TopologyConfig::Complete { n } => build_complete(*n),
            TopologyConfig::Edges { n, edges } => {
                let list: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                build_from_edges(*n, &list)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKindConfig {
    Quadratic,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKindConfig,
    /// Node count; optional, must match the topology when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Batches per node.
    pub m: usize,
    pub p: usize,
    #[serde(default = "unit")]
    pub heterogeneity: f64,
    #[serde(default)]
    pub l1: f64,
    /// Ridge weight of logistic batches; defaults to 0.005.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    /// Data seed; derived from the top-level seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scale: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorConfig {
    #[default]
    Identity,
    QuantInfNorm {
        bits: u32,
        block_size: usize,
        /// Noise-to-signal constant used for parameter selection instead of the analytic bound.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
    },
}

impl CompressorConfig {
    pub fn build(&self) -> Result<CompressorSpec> {
        match self {
            CompressorConfig::Identity => Ok(CompressorSpec::identity()),
            CompressorConfig::QuantInfNorm { bits, block_size, c } => {
                let spec = CompressorSpec::quant_inf_norm(*bits, *block_size)?;
                match c {
                    Some(c) => spec.with_c(*c),
                    None => Ok(spec),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKindConfig {
    #[default]
    Full,
    Sgd,
    Lsvrg,
    Saga,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub kind: OracleKindConfig,
    /// LSVRG refresh probability; defaults to `1/m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lsvrg_p: Option<f64>,
}

impl OracleConfig {
    pub fn lsvrg_p(&self, m: usize) -> f64 {
        self.lsvrg_p.unwrap_or(1.0 / m as f64)
    }

    pub fn build(&self, m: usize) -> OracleKind {
        match self.kind {
            OracleKindConfig::Full => OracleKind::Full,
            OracleKindConfig::Sgd => OracleKind::Sgd,
            OracleKindConfig::Lsvrg => OracleKind::Lsvrg { refresh: self.lsvrg_p(m) },
            OracleKindConfig::Saga => OracleKind::Saga,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// `prox_lead`, `lead`, `nids` or `dgd`.
    pub name: String,
    /// `thm5`, `cor6`, `thm7`, `thm8`, `thm9` or `experimental`.
    pub params: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Replaces the selected `α` (fixed schedules only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Replaces the selected `γ` (fixed schedules only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Dual stepsize ratio of NIDS; 1 matches Prox-LEAD with `γ = η`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nids_lambda: Option<f64>,
}

impl AlgorithmConfig {
    pub fn algorithm(&self) -> Result<Algorithm> {
        self.name.parse()
    }

    pub fn source(&self) -> Result<ParamSource> {
        self.params.parse()
    }
}

fn sha_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Serialize)]
struct ProblemKey<'a> {
    n: usize,
    data_seed: u64,
    problem: &'a ProblemConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Structural checks that do not need the problem to be built.
    pub fn check(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        if self.metrics_stride == 0 {
            return Err(Error::Config("metrics_stride must be at least 1".into()));
        }
        if self.problem.m == 0 || self.problem.p == 0 {
            return Err(Error::Config("problem.m and problem.p must be positive".into()));
        }
        if let Some(n) = self.problem.n {
            if n != self.topology.n() {
                return Err(Error::Config(format!("problem.n = {n} but the topology has {} nodes", self.topology.n())));
            }
        }
        self.algorithm.algorithm()?;
        self.algorithm.source()?;
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.problem.seed.unwrap_or_else(|| derive_seed(self.seed, u64::MAX))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let p = &self.problem;
        let n = self.topology.n();
        let seed = self.data_seed();
        let mut spec = match p.kind {
            ProblemKindConfig::Quadratic => SyntheticSpec::quadratic(n, p.m, p.p, p.heterogeneity, seed),
            ProblemKindConfig::Logistic => SyntheticSpec::logistic(n, p.m, p.p, p.heterogeneity, seed),
        };
        spec = spec.with_l1(p.l1);
        if let Some(l2) = p.l2 {
            spec.l2 = l2;
        }
        if let Some(s) = p.samples_per_batch {
            spec.samples_per_batch = s;
        }
        if let Some(f) = p.feature_scale {
            spec.feature_scale = f;
        }
        spec
    }

    /// Canonical TOML with the output location and label removed.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.name = None;
        c.output = PathBuf::new();
        toml::to_string(&c).expect("config serializes")
    }

    /// Short hash of [`Self::canonical`].
    pub fn hash(&self) -> String {
        sha_hex(&self.canonical())
    }

    /// Hash of everything the optimum depends on.
    pub fn problem_hash(&self) -> String {
        let key = ProblemKey { n: self.topology.n(), data_seed: self.data_seed(), problem: &self.problem };
        sha_hex(&toml::to_string(&key).expect("problem key serializes"))
    }

    /// Hash of the problem together with the network.
    pub fn instance_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            problem: ProblemKey<'a>,
            topology: &'a TopologyConfig,
        }
        let key = Key {
            problem: ProblemKey { n: self.topology.n(), data_seed: self.data_seed(), problem: &self.problem },
            topology: &self.topology,
        };
        sha_hex(&toml::to_string(&key).expect("instance key serializes"))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("run-{}", self.hash()))
    }

    /// Output directory name: the label followed by the config hash.
    pub fn run_dir_name(&self) -> String {
        match &self.name {
            Some(name) => format!("{name}-{}", self.hash()),
            None => self.label(),
        }
    }

    /// `PROXLEAD_OUT_DIR` when set, else the configured `output`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.clone(),
        }
    }

    /// Sets a sweepable field from its string value.
    pub fn set_axis(&mut self, axis: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(axis: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("invalid value {v:?} for axis {axis}")))
        }
        match axis {
            "eta" => self.algorithm.eta = Some(num(axis, value)?),
            "alpha" => self.algorithm.alpha = Some(num(axis, value)?),
            "gamma" => self.algorithm.gamma = Some(num(axis, value)?),
            "nids_lambda" => self.algorithm.nids_lambda = Some(num(axis, value)?),
            "params" => self.algorithm.params = value.to_string(),
            "algorithm" => self.algorithm.name = value.to_string(),
            "bits" | "block_size" => {
                let (mut bits, mut block) = match &self.compressor {
                    CompressorConfig::QuantInfNorm { bits, block_size, .. } => (*bits, *block_size),
                    CompressorConfig::Identity => (2, self.problem.p),
                };
                if axis == "bits" {
                    bits = num(axis, value)?;
                } else {
                    block = num(axis, value)?;
                }
                self.compressor = CompressorConfig::QuantInfNorm { bits, block_size: block, c: None };
            }
            "lsvrg_p" => self.oracle.lsvrg_p = Some(num(axis, value)?),
            "seed" => self.seed = num(axis, value)?,
            "iterations" => self.iterations = num(axis, value)?,
            "replicas" => self.replicas = num(axis, value)?,
            "heterogeneity" => self.problem.heterogeneity = num(axis, value)?,
            "l1" => self.problem.l1 = num(axis, value)?,
            _ => return Err(Error::Config(format!("unknown sweep axis {axis:?}"))),
        }
        self.check()
    }
}

/// Names accepted by [`ExperimentConfig::set_axis`].
pub const SWEEP_AXES: [&str; 14] = [
    "eta",
    "alpha",
    "gamma",
    "nids_lambda",
    "params",
    "algorithm",
    "bits",
    "block_size",
    "lsvrg_p",
    "seed",
    "iterations",
    "heterogeneity",
    "l1",
    "replicas",
];
