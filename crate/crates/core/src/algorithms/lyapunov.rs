//! Lyapunov function and per-iteration consistency checks.

use nalgebra::DMatrix;

use super::iterate::AlgorithmState;
use super::params::{lyapunov_m, StepParams};
use crate::error::{Error, Result};
use crate::oracle::{OracleKind, OracleState};
use crate::problem::{CompositeProblem, ReferenceSolution};
use crate::topology::Network;

/// Tolerance for the structural invariants checked every iteration.
pub const INVARIANT_TOL: f64 = 1e-10;
/// Allowed component of `D - D*` along the all-ones direction.
pub const DUAL_MEAN_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovTerms {
    /// Weight `M` on the primal term.
    pub m: f64,
    /// `M‖X - X*‖²`.
    pub x_term: f64,
    /// `(2η²/γ)‖D - D*‖²_{(I-W)†}`.
    pub d_term: f64,
    /// `√C‖H - Z*‖²`.
    pub h_term: f64,
    /// Oracle reference-point term, zero for plain and full oracles.
    pub bregman_term: f64,
    pub phi: f64,
    pub phi_tilde: f64,
}

/// Removes the column means.
fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

fn mean_component(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.sum() * c.sum() / n).sum::<f64>().sqrt()
}

/// Evaluates `Φ` (and `Φ̃` for LSVRG/SAGA oracles) at `state`.
///
/// `reference` is re-centred to `sp.eta` when it was built for another stepsize.
pub fn lyapunov(
    state: &AlgorithmState,
    reference: &ReferenceSolution,
    prob: &CompositeProblem,
    net: &Network,
    oracle: Option<&OracleState>,
    sp: StepParams,
    c: f64,
) -> Result<LyapunovTerms> {
    let recentred;
    let r = if (reference.eta - sp.eta).abs() > 1e-15 * sp.eta {
        recentred = reference.with_eta(prob, sp.eta)?;
        &recentred
    } else {
        reference
    };
    let dd = &state.d - &r.d_star;
    let drift = mean_component(&dd);
    if drift > DUAL_MEAN_TOL * dd.norm().max(1.0) {
        return Err(Error::StateCorruption(format!("D - D* has component {drift:e} along the ones vector")));
    }
    let m = lyapunov_m(c, sp.alpha, sp.gamma, net.spectral().lam_max);
    let x_term = m * (&state.x - &r.x_star_mat).norm_squared();
    let d_term = (2.0 * sp.eta * sp.eta / sp.gamma) * net.pinv_norm_sq(&center_columns(&dd)).max(0.0);
    let h_term = c.sqrt() * (&state.h - &r.z_star).norm_squared();
    let l = prob.constants().1;
    let bregman_term = match oracle {
        Some(o) => match o.kind() {
            OracleKind::Lsvrg { refresh } => {
                let pts = o.lsvrg_points().ok_or_else(|| Error::OracleNotInitialized("lsvrg".into()))?;
                let sum: f64 = (0..prob.n())
                    .map(|i| prob.bregman_node(i, &pts.row(i).transpose(), &r.x_star).max(0.0))
                    .sum();
                2.0 / (9.0 * refresh * l) * sum
            }
            OracleKind::Saga => {
                let mut sum = 0.0;
                for i in 0..prob.n() {
                    for j in 0..prob.m() {
                        let pt = o.saga_point(i, j).ok_or_else(|| Error::OracleNotInitialized("saga".into()))?;
                        sum += prob.bregman_batch(i, j, pt, &r.x_star).max(0.0);
                    }
                }
                2.0 / (9.0 * l) * sum
            }
            OracleKind::Full | OracleKind::Sgd => 0.0,
        },
        None => 0.0,
    };
    let phi = x_term + d_term + h_term;
    Ok(LyapunovTerms { m, x_term, d_term, h_term, bregman_term, phi, phi_tilde: phi + bregman_term })
}

/// Relative gap in the one-step expansion
/// `‖Z' - Z*‖² = ‖A‖² + η²‖D - D*‖² - 2η⟨D - D*, A⟩`, `A = X - X* - ηG + η∇F(X*)`,
/// where `(x, d, g)` are the iterate, dual and gradient that produced `z_next`.
pub fn expansion_residual(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    z_next: &DMatrix<f64>,
    reference: &ReferenceSolution,
    eta: f64,
) -> f64 {
    let a = x - &reference.x_star_mat - g * eta + &reference.grad_star * eta;
    let dd = d - &reference.d_star;
    let lhs = (z_next - &reference.z_star).norm_squared();
    let rhs = a.norm_squared() + eta * eta * dd.norm_squared() - 2.0 * eta * dd.dot(&a);
    let scale = lhs.abs().max(a.norm_squared()).max(eta * eta * dd.norm_squared()).max(f64::MIN_POSITIVE);
    (lhs - rhs).abs() / scale
}

/// Checks `H_w = W·H` and that the columns of `D` sum to zero.
pub fn check_invariants(state: &AlgorithmState, net: &Network) -> Result<()> {
    let wh = net.mix(&state.h)?;
    let gap = (&state.h_w - &wh).norm();
    if gap > INVARIANT_TOL * wh.norm().max(1.0) {
        return Err(Error::StateCorruption(format!("H_w deviates from W·H by {gap:e} at k = {}", state.k)));
    }
    let sums = mean_component(&state.d);
    if sums > INVARIANT_TOL * state.d.norm().max(1.0) {
        return Err(Error::StateCorruption(format!("rows of D sum to {sums:e} at k = {}", state.k)));
    }
    Ok(())
}
