//! Stochastic gradient oracles: full, plain stochastic, loopless SVRG and SAGA.
//!
//! Each node samples a batch index `l ~ P_i` independently per call. The
//! estimators are
//!
//! ```text
//! sgd:   g_i = w_il ∇f_il(x_i)
//! lsvrg: g_i = w_il (∇f_il(x_i) - ∇f_il(x̃_i)) + ∇f_i(x̃_i),  then x̃_i <- x_i w.p. q
//! saga:  g_i = w_il (∇f_il(x_i) - T_il) + mean_j T_ij,        then T_il <- ∇f_il(x_i)
//! ```
//!
//! with `w_il = 1 / (m p_il)` (one for uniform sampling). The LSVRG coin is
//! flipped after `g_i` is formed, so the estimate uses the old reference.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::CompositeProblem;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleKind {
    Full,
    Sgd,
    /// Loopless SVRG with reference refresh probability `refresh`.
    Lsvrg { refresh: f64 },
    Saga,
}

impl OracleKind {
    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::Full => "full",
            OracleKind::Sgd => "sgd",
            OracleKind::Lsvrg { .. } => "lsvrg",
            OracleKind::Saga => "saga",
        }
    }
}

/// Per-node batch sampling distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampling {
    Uniform,
    /// `probs[i][l] = p_il`; each row sums to one.
    Custom(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
struct LsvrgMemory {
    points: DMatrix<f64>,
    grads: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct SagaMemory {
    /// `points[i][j]` is the reference point x̃_ij (kept for Bregman diagnostics).
    points: Vec<Vec<DVector<f64>>>,
    table: Vec<Vec<DVector<f64>>>,
    avg: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct OracleState {
    kind: OracleKind,
    sampling: Sampling,
    n: usize,
    m: usize,
    grad_evals: u64,
    lsvrg: Option<LsvrgMemory>,
    saga: Option<SagaMemory>,
}

fn row(x: &DMatrix<f64>, i: usize) -> DVector<f64> {
    x.row(i).transpose()
}

impl OracleState {
    /// Builds the oracle at the starting iterate `x0`. LSVRG and SAGA evaluate
    /// all `n·m` batch gradients there.
    pub fn init(kind: OracleKind, prob: &CompositeProblem, x0: &DMatrix<f64>) -> Result<Self> {
        Self::init_with_sampling(kind, Sampling::Uniform, prob, x0)
    }

    pub fn init_with_sampling(kind: OracleKind, sampling: Sampling, prob: &CompositeProblem, x0: &DMatrix<f64>) -> Result<Self> {
        prob.check_shape(x0)?;
        let (n, m) = (prob.n(), prob.m());
        if let Sampling::Custom(probs) = &sampling {
            let ok = probs.len() == n
                && probs.iter().all(|r| r.len() == m && r.iter().all(|&v| v > 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if !ok {
                return Err(Error::InvalidParams("sampling distribution must be n rows of m positive probabilities summing to 1".into()));
            }
        }
        let mut state = Self { kind, sampling, n, m, grad_evals: 0, lsvrg: None, saga: None };
        match kind {
            OracleKind::Full | OracleKind::Sgd => {}
            OracleKind::Lsvrg { refresh } => {
                if !(refresh > 0.0 && refresh <= 1.0) {
                    return Err(Error::InvalidParams(format!("lsvrg refresh probability must lie in (0, 1], got {refresh}")));
                }
                let grads = prob.grad_matrix(x0)?;
                state.grad_evals += (n * m) as u64;
                state.lsvrg = Some(LsvrgMemory { points: x0.clone(), grads });
            }
            OracleKind::Saga => {
                let mut points = Vec::with_capacity(n);
                let mut table = Vec::with_capacity(n);
                let mut avg = DMatrix::zeros(n, prob.p());
                for i in 0..n {
                    let xi = row(x0, i);
                    let grads: Vec<_> = (0..m).map(|j| prob.grad_batch(i, j, &xi)).collect::<Result<_>>()?;
                    let mean = grads.iter().fold(DVector::zeros(prob.p()), |acc, g| acc + g) / m as f64;
                    avg.row_mut(i).copy_from(&mean.transpose());
                    points.push(vec![xi; m]);
                    table.push(grads);
                }
                state.grad_evals += (n * m) as u64;
                state.saga = Some(SagaMemory { points, table, avg });
            }
        }
        Ok(state)
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }

    /// `p_il`.
    pub fn prob_of(&self, i: usize, l: usize) -> f64 {
        match &self.sampling {
            Sampling::Uniform => 1.0 / self.m as f64,
            Sampling::Custom(p) => p[i][l],
        }
    }

    fn weight(&self, i: usize, l: usize) -> f64 {
        match &self.sampling {
            Sampling::Uniform => 1.0,
            Sampling::Custom(p) => 1.0 / (self.m as f64 * p[i][l]),
        }
    }

    fn draw_index<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        match &self.sampling {
            Sampling::Uniform => rng.random_range(0..self.m),
            Sampling::Custom(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (l, &pl) in p[i].iter().enumerate() {
                    acc += pl;
                    if u < acc {
                        return l;
                    }
                }
                self.m - 1
            }
        }
    }

    /// The estimate node `i` would return at `x` for batch `l`, without
    /// touching any memory. For `Full` the index is ignored.
    pub fn estimate(&self, prob: &CompositeProblem, i: usize, x: &DVector<f64>, l: usize) -> Result<DVector<f64>> {
        match self.kind {
            OracleKind::Full => prob.grad_full(i, x),
            OracleKind::Sgd => Ok(prob.grad_batch(i, l, x)? * self.weight(i, l)),
            OracleKind::Lsvrg { .. } => {
                let mem = self.lsvrg.as_ref().ok_or_else(|| Error::OracleNotInitialized("lsvrg reference".into()))?;
                let gl = prob.grad_batch(i, l, x)?;
                let gref = prob.grad_batch(i, l, &row(&mem.points, i))?;
                Ok((gl - gref) * self.weight(i, l) + row(&mem.grads, i))
            }
            OracleKind::Saga => {
                let mem = self.saga.as_ref().ok_or_else(|| Error::OracleNotInitialized("saga table".into()))?;
                let gl = prob.grad_batch(i, l, x)?;
                Ok((gl - &mem.table[i][l]) * self.weight(i, l) + row(&mem.avg, i))
            }
        }
    }

    /// One oracle call `G = Sgo(X)`, updating references and counters.
    pub fn sample<R: Rng + ?Sized>(&mut self, prob: &CompositeProblem, x: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
        prob.check_shape(x)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("oracle input entry {i}")));
        }
        let (n, m) = (self.n, self.m);
        let mut g = DMatrix::zeros(n, prob.p());
        match self.kind {
            OracleKind::Full => {
                g = prob.grad_matrix(x)?;
                self.grad_evals += (n * m) as u64;
            }
            OracleKind::Sgd => {
                for i in 0..n {
                    let l = self.draw_index(i, rng);
                    let gi = self.estimate(prob, i, &row(x, i), l)?;
                    g.row_mut(i).copy_from(&gi.transpose());
                }
                self.grad_evals += n as u64;
            }
            OracleKind::Lsvrg { refresh } => {
                for i in 0..n {
                    let l = self.draw_index(i, rng);
                    let xi = row(x, i);
                    let gi = self.estimate(prob, i, &xi, l)?;
                    g.row_mut(i).copy_from(&gi.transpose());
                    self.grad_evals += 2;
                    let omega = rng.random::<f64>() < refresh;
                    if omega {
                        let full = prob.grad_full(i, &xi)?;
                        let mem = self.lsvrg.as_mut().expect("checked by estimate");
                        mem.points.row_mut(i).copy_from(&xi.transpose());
                        mem.grads.row_mut(i).copy_from(&full.transpose());
                        self.grad_evals += m as u64;
                    }
                }
            }
            OracleKind::Saga => {
                for i in 0..n {
                    let l = self.draw_index(i, rng);
                    let xi = row(x, i);
                    let fresh = prob.grad_batch(i, l, &xi)?;
                    let w = self.weight(i, l);
                    let mem = self.saga.as_mut().ok_or_else(|| Error::OracleNotInitialized("saga table".into()))?;
                    let gi = (&fresh - &mem.table[i][l]) * w + row(&mem.avg, i);
                    g.row_mut(i).copy_from(&gi.transpose());
                    let delta = (&fresh - &mem.table[i][l]) / m as f64;
                    let mut avg_row = mem.avg.row_mut(i);
                    avg_row += delta.transpose();
                    mem.table[i][l] = fresh;
                    mem.points[i][l] = xi;
                    self.grad_evals += 1;
                }
            }
        }
        Ok(g)
    }

    /// Estimator variance `(1/n) Σ_i E_l ‖g_i(l) - ∇f_i(x)‖²` at a common
    /// point `x`. Exact enumeration for `m <= 64`, Monte Carlo otherwise.
    pub fn variance_at<R: Rng + ?Sized>(&self, prob: &CompositeProblem, x: &DVector<f64>, trials: usize, rng: &mut R) -> Result<f64> {
        if matches!(self.kind, OracleKind::Full) {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for i in 0..self.n {
            let mean = prob.grad_full(i, x)?;
            if self.m <= 64 {
                for l in 0..self.m {
                    total += self.prob_of(i, l) * (self.estimate(prob, i, x, l)? - &mean).norm_squared();
                }
            } else {
                let mut acc = 0.0;
                for _ in 0..trials.max(1) {
                    let l = self.draw_index(i, rng);
                    acc += (self.estimate(prob, i, x, l)? - &mean).norm_squared();
                }
                total += acc / trials.max(1) as f64;
            }
        }
        Ok(total / self.n as f64)
    }

    /// LSVRG reference points `x̃_i` as rows.
    pub fn lsvrg_points(&self) -> Option<&DMatrix<f64>> {
        self.lsvrg.as_ref().map(|m| &m.points)
    }

    /// Stored `∇f_i(x̃_i)` as rows.
    pub fn lsvrg_grads(&self) -> Option<&DMatrix<f64>> {
        self.lsvrg.as_ref().map(|m| &m.grads)
    }

    pub fn saga_point(&self, i: usize, j: usize) -> Option<&DVector<f64>> {
        self.saga.as_ref().map(|m| &m.points[i][j])
    }

    /// Running per-node averages of the SAGA table.
    pub fn saga_average(&self) -> Option<&DMatrix<f64>> {
        self.saga.as_ref().map(|m| &m.avg)
    }

    /// Largest deviation between the running SAGA averages and a fresh
    /// recomputation of the table means.
    pub fn saga_drift(&self) -> Option<f64> {
        let mem = self.saga.as_ref()?;
        let mut worst = 0.0f64;
        for (i, grads) in mem.table.iter().enumerate() {
            let mean = grads.iter().fold(DVector::zeros(mem.avg.ncols()), |acc, g| acc + g) / self.m as f64;
            worst = worst.max((mean - row(&mem.avg, i)).amax());
        }
        Some(worst)
    }

    /// Largest deviation between the stored LSVRG reference gradients and
    /// `∇f_i` recomputed at the stored points.
    pub fn lsvrg_drift(&self, prob: &CompositeProblem) -> Option<f64> {
        let mem = self.lsvrg.as_ref()?;
        let fresh = prob.grad_matrix(&mem.points).ok()?;
        Some((fresh - &mem.grads).amax())
    }
}
