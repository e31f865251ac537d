//! On-disk cache of centralized optima.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::problem::{solve_reference, CompositeProblem, ReferenceSolution};

/// Tolerance of the cached reference solves.
pub const REFERENCE_TOL: f64 = 1e-12;

#[derive(Serialize, Deserialize)]
struct CachedReference {
    problem_hash: String,
    tol: f64,
    obj_star: f64,
    x_star: Vec<f64>,
}

pub fn reference_path(cache_dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    cache_dir.join(format!("reference-{}.toml", cfg.problem_hash()))
}

/// Loads the cached optimum for `cfg` or solves and stores it. The fixed
/// points are assembled for `eta`.
pub fn cached_reference(
    prob: &CompositeProblem,
    cfg: &ExperimentConfig,
    eta: f64,
    cache_dir: Option<&Path>,
) -> Result<ReferenceSolution> {
    let Some(dir) = cache_dir else {
        return solve_reference(prob, eta, REFERENCE_TOL);
    };
    let path = reference_path(dir, cfg);
    if let Ok(text) = std::fs::read_to_string(&path) {
        let cached: CachedReference =
            toml::from_str(&text).map_err(|e| Error::Config(format!("corrupt reference cache {}: {e}", path.display())))?;
        if cached.problem_hash == cfg.problem_hash() && cached.x_star.len() == prob.p() {
            return ReferenceSolution::from_optimum(prob, DVector::from_vec(cached.x_star), eta, cached.tol);
        }
    }
    let sol = solve_reference(prob, eta, REFERENCE_TOL)?;
    std::fs::create_dir_all(dir)?;
    let cached = CachedReference {
        problem_hash: cfg.problem_hash(),
        tol: sol.tol,
        obj_star: sol.obj_star,
        x_star: sol.x_star.iter().copied().collect(),
    };
    let text = toml::to_string(&cached).map_err(|e| Error::Config(e.to_string()))?;
    // write-then-rename so concurrent runs never read a partial file
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let tmp = path.with_extension(format!("tmp{}-{}", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed)));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(sol)
}
