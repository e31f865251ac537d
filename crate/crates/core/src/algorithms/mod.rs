//! Prox-LEAD, LEAD and the uncompressed baselines.

mod comm;
mod iterate;
mod lyapunov;
mod params;

pub use comm::{comm, CommOutput};
pub use iterate::{
    bits_per_round, check_divergence, dgd_step, initialize, lead_step, nids_step, prox_lead_step, Algorithm, AlgorithmState,
    Setup, Streams, DIVERGENCE_NORM,
};
pub use lyapunov::{check_invariants, expansion_residual, lyapunov, LyapunovTerms, DUAL_MEAN_TOL, INVARIANT_TOL};
pub use params::{
    lyapunov_m, lyapunov_m_tilde, rho_cor6, rho_fixed, rho_lsvrg, rho_saga, select_params, ParamInputs, ParamSource, Params,
    Schedule, StepParams,
};
