use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use super::comm::comm;
use super::params::StepParams;
use crate::compression::{CompressorSpec, FLOAT_BITS};
use crate::error::{Error, Result};
use crate::oracle::{OracleKind, OracleState};
use crate::problem::CompositeProblem;
use crate::rng::{stream, Purpose};
use crate::topology::Network;

/// Iterates with `‖X‖_F` above this count as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    ProxLead,
    /// Smooth variant whose primal update skips the proximal step.
    Lead,
    Nids,
    Dgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::ProxLead, Algorithm::Lead, Algorithm::Nids, Algorithm::Dgd];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ProxLead => "prox_lead",
            Algorithm::Lead => "lead",
            Algorithm::Nids => "nids",
            Algorithm::Dgd => "dgd",
        }
    }

    /// Whether the method runs the compressed communication round.
    pub fn compresses(&self) -> bool {
        matches!(self, Algorithm::ProxLead | Algorithm::Lead)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Everything that stays fixed along a run.
#[derive(Clone, Copy)]
pub struct Setup<'a> {
    pub prob: &'a CompositeProblem,
    pub net: &'a Network,
    pub compressor: &'a CompressorSpec,
}

/// Independent random streams for gradient sampling and compression.
#[derive(Clone, Debug)]
pub struct Streams {
    pub oracle: ChaCha8Rng,
    pub compressor: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, replica: u32) -> Self {
        Self { oracle: stream(seed, replica, Purpose::Oracle), compressor: stream(seed, replica, Purpose::Compressor) }
    }
}

/// Iterate of any of the methods. Methods that do not use a field leave it at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmState {
    pub x: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Neighbour aggregate, kept equal to `W·H`.
    pub h_w: DMatrix<f64>,
    /// Last pre-communication point `Z`.
    pub z: DMatrix<f64>,
    /// Last gradient estimate.
    pub g: DMatrix<f64>,
    /// Iterations completed after the bootstrap step, so `x` is `X^{k+1}`.
    pub k: usize,
    pub bits_sent: u64,
}

impl AlgorithmState {
    /// State with the given `X`, `D`, `H` and a consistent `H_w`.
    pub fn at(x: DMatrix<f64>, d: DMatrix<f64>, h: DMatrix<f64>, net: &Network) -> Result<Self> {
        if d.shape() != x.shape() || h.shape() != x.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", x.shape()),
                got: format!("D {:?}, H {:?}", d.shape(), h.shape()),
            });
        }
        let h_w = net.mix(&h)?;
        let zero = DMatrix::zeros(x.nrows(), x.ncols());
        Ok(Self { z: x.clone(), g: zero, x, d, h, h_w, k: 0, bits_sent: 0 })
    }

    /// Recomputes `H_w = W·H`.
    pub fn rebuild_h_w(&mut self, net: &Network) -> Result<()> {
        self.h_w = net.mix(&self.h)?;
        Ok(())
    }
}

/// Fails with [`Error::Divergence`] on non-finite entries or `‖X‖_F > 1e12`.
pub fn check_divergence(k: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { k, reason: "non-finite iterate".into() });
    }
    let norm = x.norm();
    if norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { k, reason: format!("‖X‖_F = {norm:e} exceeds {DIVERGENCE_NORM:e}") });
    }
    Ok(())
}

/// Builds the oracle at `x0` and runs the first gradient step:
/// `X¹ = prox_{ηR}(X⁰ - η G⁰)` (no prox for [`Algorithm::Lead`]), `H¹ = X⁰`,
/// `H_w¹ = W H¹`, `D¹ = 0`.
pub fn initialize(
    alg: Algorithm,
    setup: Setup<'_>,
    oracle_kind: OracleKind,
    x0: &DMatrix<f64>,
    p0: StepParams,
    streams: &mut Streams,
) -> Result<(AlgorithmState, OracleState)> {
    setup.prob.check_shape(x0)?;
    let mut oracle = OracleState::init(oracle_kind, setup.prob, x0)?;
    let g = oracle.sample(setup.prob, x0, &mut streams.oracle)?;
    let z = x0 - &g * p0.eta;
    let x = if alg == Algorithm::Lead { z.clone() } else { setup.prob.prox(p0.eta, &z) };
    let h = x0.clone();
    let h_w = setup.net.mix(&h)?;
    let d = DMatrix::zeros(x0.nrows(), x0.ncols());
    check_divergence(0, &x)?;
    Ok((AlgorithmState { x, d, h, h_w, z, g, k: 0, bits_sent: 0 }, oracle))
}

fn compressed_step(
    lead: bool,
    state: &mut AlgorithmState,
    setup: Setup<'_>,
    oracle: &mut OracleState,
    sp: StepParams,
    streams: &mut Streams,
) -> Result<()> {
    let StepParams { eta, alpha, gamma } = sp;
    let g = oracle.sample(setup.prob, &state.x, &mut streams.oracle)?;
    let z = &state.x - &g * eta - &state.d * eta;
    let out = comm(&z, &state.h, &state.h_w, alpha, setup.compressor, setup.net, &mut streams.compressor)?;
    let diff = &out.z_hat - &out.z_hat_w;
    let d = &state.d + &diff * (gamma / (2.0 * eta));
    let x = if lead {
        &state.x - &g * eta - &d * eta
    } else {
        setup.prob.prox(eta, &(&z - &diff * (0.5 * gamma)))
    };
    check_divergence(state.k + 1, &x)?;
    state.x = x;
    state.d = d;
    state.h = out.h;
    state.h_w = out.h_w;
    state.z = z;
    state.g = g;
    state.k += 1;
    state.bits_sent += out.bits;
    Ok(())
}

/// One Prox-LEAD iteration.
pub fn prox_lead_step(
    state: &mut AlgorithmState,
    setup: Setup<'_>,
    oracle: &mut OracleState,
    sp: StepParams,
    streams: &mut Streams,
) -> Result<()> {
    compressed_step(false, state, setup, oracle, sp, streams)
}

/// One LEAD iteration. The primal update reuses the gradient drawn for `Z`.
pub fn lead_step(
    state: &mut AlgorithmState,
    setup: Setup<'_>,
    oracle: &mut OracleState,
    sp: StepParams,
    streams: &mut Streams,
) -> Result<()> {
    compressed_step(true, state, setup, oracle, sp, streams)
}

fn full_precision_bits(prob: &CompositeProblem) -> u64 {
    (prob.n() * prob.p()) as u64 * FLOAT_BITS
}

/// One NIDS iteration with dual stepsize ratio `lambda`:
/// `X̄ = X - η∇F - ηD`, `D' = D + (λ/2)(I-W)X̄`, `X' = prox(X - η∇F - ηD')`.
pub fn nids_step(
    state: &mut AlgorithmState,
    prob: &CompositeProblem,
    net: &Network,
    oracle: &mut OracleState,
    eta: f64,
    lambda: f64,
    streams: &mut Streams,
) -> Result<()> {
    let g = oracle.sample(prob, &state.x, &mut streams.oracle)?;
    let step = &state.x - &g * eta;
    let x_bar = &step - &state.d * eta;
    let d = &state.d + net.laplacian_apply(&x_bar) * (0.5 * lambda);
    let x = prob.prox(eta, &(&step - &d * eta));
    check_divergence(state.k + 1, &x)?;
    state.x = x;
    state.d = d;
    state.z = x_bar;
    state.g = g;
    state.k += 1;
    state.bits_sent += full_precision_bits(prob);
    Ok(())
}

/// One decentralized gradient step `X' = prox_{ηr}(W X - η∇F(X))`. With `r = 0`
/// this is plain DGD; the prox after mixing is a convention for composite runs.
pub fn dgd_step(
    state: &mut AlgorithmState,
    prob: &CompositeProblem,
    net: &Network,
    oracle: &mut OracleState,
    eta: f64,
    streams: &mut Streams,
) -> Result<()> {
    let g = oracle.sample(prob, &state.x, &mut streams.oracle)?;
    let v = net.mix(&state.x)? - &g * eta;
    let x = prob.prox(eta, &v);
    check_divergence(state.k + 1, &x)?;
    state.z = v;
    state.x = x;
    state.g = g;
    state.k += 1;
    state.bits_sent += full_precision_bits(prob);
    Ok(())
}

/// Bits one node sends per iteration.
pub fn bits_per_round(alg: Algorithm, compressor: &CompressorSpec, p: usize) -> u64 {
    if alg.compresses() {
        crate::compression::bit_count(compressor, p)
    } else {
        p as u64 * FLOAT_BITS
    }
}
