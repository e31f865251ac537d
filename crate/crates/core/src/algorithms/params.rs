//! Stepsize selection from the convergence theorems.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::topology::SpectralInfo;

/// Which result the parameters are taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamSource {
    /// Compressed stochastic setting, fixed parameters.
    Thm5,
    /// No compression: `α = γ = 1`.
    Cor6,
    /// Diminishing `η^k`, `α^k`, `γ^k`.
    Thm7,
    /// Loopless SVRG.
    Thm8,
    /// SAGA.
    Thm9,
    /// `α = 0.5`, `γ = 1`, user-picked `η ∈ [0.01, 0.1]`.
    Experimental,
}

impl ParamSource {
    pub const ALL: [ParamSource; 6] =
        [ParamSource::Thm5, ParamSource::Cor6, ParamSource::Thm7, ParamSource::Thm8, ParamSource::Thm9, ParamSource::Experimental];

    pub fn name(&self) -> &'static str {
        match self {
            ParamSource::Thm5 => "thm5",
            ParamSource::Cor6 => "cor6",
            ParamSource::Thm7 => "thm7",
            ParamSource::Thm8 => "thm8",
            ParamSource::Thm9 => "thm9",
            ParamSource::Experimental => "experimental",
        }
    }
}

impl fmt::Display for ParamSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter source {s:?}")))
    }
}

/// Parameters for one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub eta: f64,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Fixed,
    /// `η^k = 8(1+C)²κ_gκ_f / (k + 16(1+C)²κ_gκ_f) · 1/L`,
    /// `α^k = η^k μ/(1+C)`, `γ^k = η^k μ / (2(1+C)² λ_max)`.
    Diminishing { mu: f64, l: f64, c: f64, kappa_f: f64, kappa_g: f64, lam_max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Params {
    /// Values at `k = 0` (and at every `k` for a fixed schedule).
    pub base: StepParams,
    pub schedule: Schedule,
}

impl Params {
    pub fn fixed(eta: f64, alpha: f64, gamma: f64) -> Self {
        Self { base: StepParams { eta, alpha, gamma }, schedule: Schedule::Fixed }
    }

    pub fn at(&self, k: usize) -> StepParams {
        match self.schedule {
            Schedule::Fixed => self.base,
            Schedule::Diminishing { mu, l, c, kappa_f, kappa_g, lam_max } => {
                let c2 = (1.0 + c) * (1.0 + c);
                let eta = 8.0 * c2 * kappa_g * kappa_f / (k as f64 + 16.0 * c2 * kappa_g * kappa_f) / l;
                StepParams { eta, alpha: eta * mu / (1.0 + c), gamma: eta * mu / (2.0 * c2 * lam_max) }
            }
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.schedule, Schedule::Fixed)
    }

    /// `η > 0`, `α ∈ (0, 1]`, `γ ∈ (0, 2/λ_max)`.
    pub fn validate(&self, spectral: &SpectralInfo) -> Result<()> {
        let StepParams { eta, alpha, gamma } = self.base;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParams(format!("eta = {eta} must be positive")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParams(format!("alpha = {alpha} must lie in (0, 1]")));
        }
        let bound = 2.0 / spectral.lam_max;
        if !(gamma > 0.0 && gamma < bound) {
            return Err(Error::InvalidParams(format!("gamma = {gamma} must lie in (0, {bound})")));
        }
        Ok(())
    }
}

/// Problem and network constants the formulas depend on.
#[derive(Clone, Copy, Debug)]
pub struct ParamInputs {
    pub mu: f64,
    pub l: f64,
    /// Compression noise-to-signal constant.
    pub c: f64,
    pub spectral: SpectralInfo,
    /// Batches per node.
    pub m: usize,
    /// LSVRG refresh probability.
    pub lsvrg_p: f64,
    /// Requested `η`; required for `experimental`, optional elsewhere.
    pub eta: Option<f64>,
}

fn delta(alpha: f64, c: f64) -> f64 {
    alpha - (1.0 + c) * alpha * alpha
}

fn cor6(inputs: &ParamInputs) -> Result<Params> {
    let eta = pick_eta(inputs, 0.5 / inputs.l)?;
    Ok(Params::fixed(eta, 1.0, 1.0))
}

fn pick_eta(inputs: &ParamInputs, max_eta: f64) -> Result<f64> {
    match inputs.eta {
        None => Ok(max_eta),
        Some(eta) if eta > 0.0 && eta <= max_eta * (1.0 + 1e-12) => Ok(eta),
        Some(eta) => Err(Error::InvalidParams(format!("eta = {eta} outside (0, {max_eta}]"))),
    }
}

/// Parameters prescribed by `source` for the given constants.
pub fn select_params(source: ParamSource, inputs: &ParamInputs) -> Result<Params> {
    let ParamInputs { mu, l, c, spectral, .. } = *inputs;
    if !(mu > 0.0) {
        return Err(Error::NotStronglyConvex(mu));
    }
    if !(l >= mu) {
        return Err(Error::InvalidParams(format!("L = {l} must be at least mu = {mu}")));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParams(format!("C = {c} must be finite and nonnegative")));
    }
    let lam_max = spectral.lam_max;
    let kappa_f = l / mu;
    let params = match source {
        ParamSource::Cor6 => {
            if c > 0.0 {
                return Err(Error::InvalidParams(format!("cor6 parameters require C = 0, got {c}")));
            }
            cor6(inputs)?
        }
        ParamSource::Thm5 => {
            if c == 0.0 {
                cor6(inputs)?
            } else {
                let eta = pick_eta(inputs, 0.5 / l)?;
                let sc = c.sqrt();
                let alpha = 0.5 * (eta * mu / sc).min(1.0 / (1.0 + c));
                let first = (2.0 * eta * mu - 2.0 * sc * alpha) / (lam_max * eta * mu);
                let second = delta(alpha, c) / (sc * lam_max);
                Params::fixed(eta, alpha, first.min(second))
            }
        }
        ParamSource::Thm7 => {
            let kappa_g = spectral.kappa_g;
            let schedule = Schedule::Diminishing { mu, l, c, kappa_f, kappa_g, lam_max };
            let mut p = Params { base: StepParams { eta: 0.0, alpha: 0.0, gamma: 0.0 }, schedule };
            p.base = p.at(0);
            p
        }
        ParamSource::Thm8 | ParamSource::Thm9 => {
            if source == ParamSource::Thm8 && !(inputs.lsvrg_p > 0.0 && inputs.lsvrg_p <= 1.0) {
                return Err(Error::InvalidParams(format!("lsvrg refresh probability {} outside (0, 1]", inputs.lsvrg_p)));
            }
            let eta = 1.0 / (6.0 * l);
            let alpha = 1.0 / (12.0 * (1.0 + c) * kappa_f);
            let second = 1.0 / (24.0 * (1.0 + c) * lam_max);
            let gamma = if c == 0.0 {
                second
            } else {
                (1.0 / (24.0 * c.sqrt() * (1.0 + c) * lam_max * kappa_f)).min(second)
            };
            Params::fixed(eta, alpha, gamma)
        }
        ParamSource::Experimental => {
            let eta = inputs
                .eta
                .ok_or_else(|| Error::InvalidParams("experimental parameters need an explicit eta".into()))?;
            if !(0.01..=0.1).contains(&eta) {
                return Err(Error::InvalidParams(format!("experimental eta = {eta} outside [0.01, 0.1]")));
            }
            Params::fixed(eta, 0.5, 1.0)
        }
    };
    params.validate(&spectral)?;
    Ok(params)
}

/// `M = 1 - √C α / (1 - γ λ_max / 2)`.
pub fn lyapunov_m(c: f64, alpha: f64, gamma: f64, lam_max: f64) -> f64 {
    1.0 - c.sqrt() * alpha / (1.0 - 0.5 * gamma * lam_max)
}

/// `M̃ = 1 - 2√C / (3(1+C)κ_f)`, the lower bound on `M` along the diminishing schedule.
pub fn lyapunov_m_tilde(c: f64, kappa_f: f64) -> f64 {
    1.0 - 2.0 * c.sqrt() / (3.0 * (1.0 + c) * kappa_f)
}

/// Contraction factor `max{(1-ημ)/M, 1 - γλ_min/2, 1-α}` of the fixed-parameter bound.
pub fn rho_fixed(mu: f64, c: f64, p: StepParams, spectral: &SpectralInfo) -> f64 {
    let m = lyapunov_m(c, p.alpha, p.gamma, spectral.lam_max);
    ((1.0 - p.eta * mu) / m).max(1.0 - 0.5 * p.gamma * spectral.lam_min_nz).max(1.0 - p.alpha)
}

/// Uncompressed, `α = γ = 1`: `max{1 - ημ, 1 - λ_min/2}`.
pub fn rho_cor6(mu: f64, eta: f64, spectral: &SpectralInfo) -> f64 {
    (1.0 - eta * mu).max(1.0 - 0.5 * spectral.lam_min_nz)
}

/// Per-iteration factor of the LSVRG bound.
pub fn rho_lsvrg(c: f64, kappa_f: f64, spectral: &SpectralInfo, refresh: f64) -> f64 {
    let kg = spectral.kappa_g;
    let worst = (48.0 * c.sqrt() * (1.0 + c) * kappa_f * kg)
        .max(12.0 * (1.0 + c) * kappa_f)
        .max(282.0 * kappa_f / 23.0)
        .max(48.0 * (1.0 + c) * kg)
        .max(2.0 / refresh);
    1.0 - 1.0 / worst
}

/// Per-iteration factor of the SAGA bound.
pub fn rho_saga(c: f64, kappa_f: f64, spectral: &SpectralInfo, m: usize) -> f64 {
    let kg = spectral.kappa_g;
    let first = if c == 0.0 { f64::INFINITY } else { 1.0 / (48.0 * c.sqrt() * (1.0 + c) * kg * kappa_f) };
    let best = first
        .min(1.0 / (12.0 * (1.0 + c) * kappa_f))
        .min(23.0 / (282.0 * kappa_f))
        .min(1.0 / (48.0 * (1.0 + c) * kg))
        .min(1.0 / (2.0 * m as f64));
    1.0 - best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_ring;

    fn inputs(mu: f64, l: f64, c: f64) -> ParamInputs {
        ParamInputs { mu, l, c, spectral: build_ring(8, 1.0 / 3.0).unwrap().spectral(), m: 15, lsvrg_p: 1.0 / 15.0, eta: None }
    }

    #[test]
    fn cor6_picks_unit_alpha_gamma() {
        for (mu, l) in [(1.0, 4.0), (0.01, 0.3), (2.0, 2.0)] {
            let p = select_params(ParamSource::Cor6, &inputs(mu, l, 0.0)).unwrap();
            assert_eq!(p.base, StepParams { eta: 0.5 / l, alpha: 1.0, gamma: 1.0 });
        }
        assert!(select_params(ParamSource::Cor6, &inputs(1.0, 4.0, 0.5)).is_err());
    }

    #[test]
    fn experimental_protocol() {
        let mut i = inputs(1.0, 4.0, 1.25);
        i.eta = Some(0.05);
        let p = select_params(ParamSource::Experimental, &i).unwrap();
        assert_eq!((p.base.alpha, p.base.gamma, p.base.eta), (0.5, 1.0, 0.05));
        i.eta = Some(0.2);
        assert!(select_params(ParamSource::Experimental, &i).is_err());
        i.eta = None;
        assert!(select_params(ParamSource::Experimental, &i).is_err());
    }

    #[test]
    fn thm8_uncompressed_ring() {
        // κ_f = 10, λ_max = 4/3
        let p = select_params(ParamSource::Thm8, &inputs(0.1, 1.0, 0.0)).unwrap();
        assert!((p.base.eta - 1.0 / 6.0).abs() < 1e-15);
        assert!((p.base.alpha - 1.0 / 120.0).abs() < 1e-15);
        assert!((p.base.gamma - 1.0 / 32.0).abs() < 1e-14);
        let q = select_params(ParamSource::Thm9, &inputs(0.1, 1.0, 0.0)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn thm8_compressed_takes_smaller_branch() {
        let i = inputs(0.1, 1.0, 1.25);
        let p = select_params(ParamSource::Thm8, &i).unwrap();
        let lm = 4.0 / 3.0;
        let g1 = 1.0 / (24.0 * 1.25f64.sqrt() * 2.25 * lm * 10.0);
        assert!((p.base.gamma - g1).abs() < 1e-15);
        assert!((p.base.alpha - 1.0 / (12.0 * 2.25 * 10.0)).abs() < 1e-15);
    }

    #[test]
    fn thm5_interior_point() {
        let i = inputs(1.0, 3.0, 1.25);
        let p = select_params(ParamSource::Thm5, &i).unwrap();
        let StepParams { eta, alpha, gamma } = p.base;
        assert!((eta - 1.0 / 6.0).abs() < 1e-15);
        let sc = 1.25f64.sqrt();
        assert!(alpha < (eta / sc).min(1.0 / 2.25) && alpha > 0.0);
        let lm = 4.0 / 3.0;
        let bound = ((2.0 * eta - 2.0 * sc * alpha) / (eta * lm)).min(delta(alpha, 1.25) / (sc * lm));
        assert!((gamma - bound).abs() < 1e-15);
        assert!(delta(alpha, 1.25) > 0.0);
        assert!(rho_fixed(1.0, 1.25, p.base, &i.spectral) < 1.0);
        // C = 0 falls back to cor6
        assert_eq!(select_params(ParamSource::Thm5, &inputs(1.0, 3.0, 0.0)).unwrap().base.alpha, 1.0);
    }

    #[test]
    fn thm7_schedule_decays_like_one_over_k() {
        let i = inputs(1.0, 3.0, 0.0);
        let p = select_params(ParamSource::Thm7, &i).unwrap();
        let kg = i.spectral.kappa_g;
        let k0 = 16.0 * kg * 3.0;
        assert!((p.at(0).eta - 0.5 / 3.0).abs() < 1e-15);
        let s = p.at(1000);
        assert!((s.eta - 8.0 * kg * 3.0 / (1000.0 + k0) / 3.0).abs() < 1e-15);
        assert!((s.alpha - s.eta).abs() < 1e-15);
        assert!((s.gamma - s.eta / (2.0 * 4.0 / 3.0)).abs() < 1e-15);
        assert!(!p.is_fixed());
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(matches!(select_params(ParamSource::Cor6, &inputs(0.0, 1.0, 0.0)), Err(Error::NotStronglyConvex(_))));
        assert!(select_params(ParamSource::Thm8, &inputs(2.0, 1.0, 0.0)).is_err());
        let mut i = inputs(1.0, 2.0, 0.0);
        i.eta = Some(1.0);
        assert!(select_params(ParamSource::Cor6, &i).is_err());
        i.eta = Some(0.1);
        assert_eq!(select_params(ParamSource::Cor6, &i).unwrap().base.eta, 0.1);
        let spectral = build_ring(8, 1.0 / 3.0).unwrap().spectral();
        assert!(Params::fixed(0.1, 0.5, 1.6).validate(&spectral).is_err());
        assert!(Params::fixed(0.1, 1.5, 1.0).validate(&spectral).is_err());
    }

    #[test]
    fn parse_sources() {
        for s in ParamSource::ALL {
            assert_eq!(s.name().parse::<ParamSource>().unwrap(), s);
        }
        assert!("thm6".parse::<ParamSource>().is_err());
    }

    #[test]
    fn m_tilde_bounds() {
        assert_eq!(lyapunov_m_tilde(0.0, 5.0), 1.0);
        let v = lyapunov_m_tilde(1.0, 1.0);
        assert!((2.0 / 3.0..=1.0).contains(&v));
    }
}
