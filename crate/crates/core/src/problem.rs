//! Composite objectives `(1/n) Σ_i f_i(x) + r(x)` split across nodes.
//!
//! Node `i` holds `m` batch functions and `f_i = (1/m) Σ_j f_ij`. Every batch
//! is either a quadratic `½ xᵀA x - bᵀx` or a binary logistic loss with a
//! ridge term. The nonsmooth part `r` is shared by all nodes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// One batch function `f_ij`.
#[derive(Clone, Debug)]
pub enum SmoothTerm {
    Quadratic { a: DMatrix<f64>, b: DVector<f64> },
    /// `(1/s) Σ_k [log(1 + exp(a_kᵀx)) - y_k a_kᵀx] + l2 ‖x‖²` over `s` rows.
    Logistic { features: DMatrix<f64>, labels: DVector<f64>, l2: f64 },
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    (e.min(), e.max())
}

impl SmoothTerm {
    pub fn dim(&self) -> usize {
        match self {
            SmoothTerm::Quadratic { b, .. } => b.len(),
            SmoothTerm::Logistic { features, .. } => features.ncols(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            SmoothTerm::Quadratic { a, b } => 0.5 * x.dot(&(a * x)) - b.dot(x),
            SmoothTerm::Logistic { features, labels, l2 } => {
                let t = features * x;
                let s = labels.len() as f64;
                let loss: f64 = t.iter().zip(labels.iter()).map(|(&ti, &yi)| softplus(ti) - yi * ti).sum();
                loss / s + l2 * x.norm_squared()
            }
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SmoothTerm::Quadratic { a, b } => a * x - b,
            SmoothTerm::Logistic { features, labels, l2 } => {
                let s = labels.len() as f64;
                let mut r = features * x;
                for (ri, &yi) in r.iter_mut().zip(labels.iter()) {
                    *ri = sigmoid(*ri) - yi;
                }
                features.tr_mul(&r) / s + x * (2.0 * l2)
            }
        }
    }

    /// `(μ, L)` for this batch alone.
    pub fn constants(&self) -> (f64, f64) {
        match self {
            SmoothTerm::Quadratic { a, .. } => sym_eig_range(a),
            SmoothTerm::Logistic { features, labels, l2 } => {
                let s = labels.len() as f64;
                let gram = features.tr_mul(features);
                let (_, top) = sym_eig_range(&gram);
                (2.0 * l2, top / (4.0 * s) + 2.0 * l2)
            }
        }
    }
}

/// The shared nonsmooth term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    Zero,
    L1(f64),
}

impl Regularizer {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1(w) => w * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// `prox_{eta r}` applied to a single value.
    #[inline]
    pub fn prox_scalar(&self, eta: f64, v: f64) -> f64 {
        match *self {
            Regularizer::Zero => v,
            Regularizer::L1(w) => {
                let t = eta * w;
                v.signum() * (v.abs() - t).max(0.0)
            }
        }
    }

    pub fn prox_vec(&self, eta: f64, v: &DVector<f64>) -> DVector<f64> {
        v.map(|e| self.prox_scalar(eta, e))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Regularizer::Zero | Regularizer::L1(0.0))
    }
}

#[derive(Clone, Debug)]
pub struct CompositeProblem {
    n: usize,
    m: usize,
    p: usize,
    batches: Vec<Vec<SmoothTerm>>,
    reg: Regularizer,
    mu: f64,
    l: f64,
}

impl CompositeProblem {
    /// `batches[i][j]` is `f_ij`. All nodes must hold the same number of
    /// batches, all of dimension `p`.
    pub fn new(batches: Vec<Vec<SmoothTerm>>, reg: Regularizer) -> Result<Self> {
        let n = batches.len();
        if n == 0 || batches[0].is_empty() {
            return Err(Error::DimensionMismatch { expected: "n >= 1 and m >= 1".into(), got: "empty".into() });
        }
        let m = batches[0].len();
        let p = batches[0][0].dim();
        for (i, node) in batches.iter().enumerate() {
            if node.len() != m {
                return Err(Error::DimensionMismatch { expected: format!("{m} batches"), got: format!("{} at node {i}", node.len()) });
            }
            if let Some(t) = node.iter().find(|t| t.dim() != p) {
                return Err(Error::DimensionMismatch { expected: format!("dimension {p}"), got: format!("{} at node {i}", t.dim()) });
            }
        }
        if let Regularizer::L1(w) = reg {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParams(format!("l1 weight {w}")));
            }
        }
        let (mut mu, mut l) = (f64::INFINITY, 0.0f64);
        for t in batches.iter().flatten() {
            let (a, b) = t.constants();
            mu = mu.min(a);
            l = l.max(b);
        }
        if !(mu > 0.0) {
            return Err(Error::NotStronglyConvex(mu));
        }
        Ok(Self { n, m, p, batches, reg, mu, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }
    pub fn batch(&self, i: usize, j: usize) -> &SmoothTerm {
        &self.batches[i][j]
    }

    /// `(μ, L)`: every batch is μ-strongly convex and L-smooth.
    pub fn constants(&self) -> (f64, f64) {
        (self.mu, self.l)
    }

    pub fn kappa_f(&self) -> f64 {
        self.l / self.mu
    }

    fn check_index(&self, i: usize, j: usize, x: &DVector<f64>) -> Result<()> {
        if i >= self.n || j >= self.m {
            return Err(Error::IndexOutOfRange(format!("batch ({i}, {j}) of {}x{}", self.n, self.m)));
        }
        if x.len() != self.p {
            return Err(Error::DimensionMismatch { expected: format!("{}", self.p), got: format!("{}", x.len()) });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient argument".into()));
        }
        Ok(())
    }

    /// `∇f_ij(x)`.
    pub fn grad_batch(&self, i: usize, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(i, j, x)?;
        Ok(self.batches[i][j].grad(x))
    }

    /// `∇f_i(x) = (1/m) Σ_j ∇f_ij(x)`.
    pub fn grad_full(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(i, 0, x)?;
        let mut g = DVector::zeros(self.p);
        for t in &self.batches[i] {
            g += t.grad(x);
        }
        Ok(g / self.m as f64)
    }

    pub fn batch_value(&self, i: usize, j: usize, x: &DVector<f64>) -> f64 {
        self.batches[i][j].value(x)
    }

    /// `f_i(x)`.
    pub fn node_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.batches[i].iter().map(|t| t.value(x)).sum::<f64>() / self.m as f64
    }

    /// Centralized objective `(1/n) Σ_i f_i(x) + r(x)`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (0..self.n).map(|i| self.node_value(i, x)).sum::<f64>() / self.n as f64 + self.reg.value(x)
    }

    /// `∇F(X)`: row `i` is `∇f_i(x_i)`.
    pub fn grad_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(x)?;
        let mut g = DMatrix::zeros(self.n, self.p);
        for i in 0..self.n {
            let gi = self.grad_full(i, &x.row(i).transpose())?;
            g.row_mut(i).copy_from(&gi.transpose());
        }
        Ok(g)
    }

    /// Gradient of the averaged smooth part at a single point.
    pub fn mean_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.p);
        for i in 0..self.n {
            g += self.grad_full(i, x)?;
        }
        Ok(g / self.n as f64)
    }

    pub fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n || x.ncols() != self.p {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n, self.p),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// Rowwise `prox_{eta r}`.
    pub fn prox(&self, eta: f64, v: &DMatrix<f64>) -> DMatrix<f64> {
        prox_rows(self.reg, eta, v)
    }

    /// Bregman distance `V_{f_i}(x, y)`.
    pub fn bregman_node(&self, i: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let g = self.grad_full(i, y).expect("valid node");
        self.node_value(i, x) - self.node_value(i, y) - g.dot(&(x - y))
    }

    /// Bregman distance `V_{f_ij}(x, y)`.
    pub fn bregman_batch(&self, i: usize, j: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let t = &self.batches[i][j];
        t.value(x) - t.value(y) - t.grad(y).dot(&(x - y))
    }
}

/// Rowwise prox of `r` for any `n×p` matrix.
pub fn prox_rows(reg: Regularizer, eta: f64, v: &DMatrix<f64>) -> DMatrix<f64> {
    match reg {
        Regularizer::Zero => v.clone(),
        _ => v.map(|e| reg.prox_scalar(eta, e)),
    }
}

/// Centralized optimum and the fixed points of the decentralized iteration
/// for a given stepsize.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub x_star_mat: DMatrix<f64>,
    /// `∇F(X*)`.
    pub grad_star: DMatrix<f64>,
    /// `X* - (η/n) 11ᵀ ∇F(X*)`.
    pub z_star: DMatrix<f64>,
    /// Stationary dual variable `(X* - Z*)/η - ∇F(X*) = -(I - 11ᵀ/n) ∇F(X*)`,
    /// the value that makes `X* - η∇F(X*) - ηD*` equal to `Z*`.
    pub d_star: DMatrix<f64>,
    pub obj_star: f64,
    /// Last iterate change of the solver.
    pub tol: f64,
    pub eta: f64,
}

impl ReferenceSolution {
    /// Assembles the fixed points around a known optimum `x_star`.
    pub fn from_optimum(prob: &CompositeProblem, x_star: DVector<f64>, eta: f64, tol: f64) -> Result<Self> {
        let n = prob.n();
        let x_star_mat = DMatrix::from_fn(n, prob.p(), |_, j| x_star[j]);
        let grad_star = prob.grad_matrix(&x_star_mat)?;
        let mut mean = DVector::zeros(prob.p());
        for i in 0..n {
            mean += grad_star.row(i).transpose();
        }
        mean /= n as f64;
        let z_row = &x_star - &mean * eta;
        let z_star = DMatrix::from_fn(n, prob.p(), |_, j| z_row[j]);
        let d_star = DMatrix::from_fn(n, prob.p(), |i, j| mean[j] - grad_star[(i, j)]);
        let obj_star = prob.objective(&x_star);
        Ok(Self { x_star, x_star_mat, grad_star, z_star, d_star, obj_star, tol, eta })
    }

    /// Same optimum, fixed points for a different stepsize.
    pub fn with_eta(&self, prob: &CompositeProblem, eta: f64) -> Result<Self> {
        Self::from_optimum(prob, self.x_star.clone(), eta, self.tol)
    }

    /// `‖prox_{ηr}(z*) - x*‖`.
    pub fn fixed_point_residual(&self, prob: &CompositeProblem) -> f64 {
        let z = self.z_star.row(0).transpose();
        (prob.regularizer().prox_vec(self.eta, &z) - &self.x_star).norm()
    }
}

pub const REFERENCE_MAX_ITER: usize = 1_000_000;

fn all_quadratic(prob: &CompositeProblem) -> bool {
    prob.batches.iter().flatten().all(|t| matches!(t, SmoothTerm::Quadratic { .. }))
}

/// Solves `min (1/n) Σ f_i + r` centrally to tolerance `tol` in iterate
/// change, then builds the decentralized fixed points for stepsize `eta`.
///
/// Smooth quadratics are solved directly by Cholesky; everything else runs
/// FISTA with adaptive restart followed by plain proximal-gradient polishing.
pub fn solve_reference(prob: &CompositeProblem, eta: f64, tol: f64) -> Result<ReferenceSolution> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParams(format!("eta must be positive, got {eta}")));
    }
    let p = prob.p();
    if prob.reg.is_zero() && all_quadratic(prob) {
        let mut a_mean = DMatrix::zeros(p, p);
        let mut b_mean = DVector::zeros(p);
        for t in prob.batches.iter().flatten() {
            if let SmoothTerm::Quadratic { a, b } = t {
                a_mean += a;
                b_mean += b;
            }
        }
        let chol = a_mean.cholesky().ok_or(Error::NotStronglyConvex(0.0))?;
        let x = chol.solve(&b_mean);
        return ReferenceSolution::from_optimum(prob, x, eta, 0.0);
    }

    let step = 1.0 / prob.l;
    let reg = prob.reg;
    let prox_grad = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let g = prob.mean_grad(y)?;
        Ok(reg.prox_vec(step, &(y - g * step)))
    };
    let mut x = DVector::zeros(p);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut last = f64::INFINITY;
    let mut iters = 0;
    let mut converged = false;
    while iters < REFERENCE_MAX_ITER {
        iters += 1;
        let x_new = prox_grad(&y)?;
        last = (&x_new - &x).norm();
        if last <= tol {
            x = x_new;
            converged = true;
            break;
        }
        // gradient-based adaptive restart
        if (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
            t = 1.0;
            y = x_new.clone();
        } else {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
            t = t_new;
        }
        x = x_new;
    }
    if !converged {
        return Err(Error::ReferenceNotConverged { iterations: iters, last_step: last });
    }
    // momentum-free polishing: monotone contraction towards the optimum
    loop {
        let x_new = prox_grad(&x)?;
        let step_norm = (&x_new - &x).norm();
        x = x_new;
        iters += 1;
        if step_norm <= tol * 1e-2 || step_norm >= last || iters >= REFERENCE_MAX_ITER {
            last = step_norm.min(last);
            break;
        }
        last = step_norm;
    }
    ReferenceSolution::from_optimum(prob, x, eta, last)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

/// Recipe for a synthetic heterogeneous instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: ProblemKind,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `0` gives nodes with a common minimizer; larger values push local optima apart.
    pub heterogeneity: f64,
    pub l1: f64,
    /// Ridge weight λ₂ of logistic batches.
    pub l2: f64,
    /// Rows per logistic batch.
    pub samples_per_batch: usize,
    /// Overall scale of logistic features; controls `L`.
    pub feature_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn quadratic(n: usize, m: usize, p: usize, heterogeneity: f64, seed: u64) -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            n,
            m,
            p,
            heterogeneity,
            l1: 0.0,
            l2: 0.0,
            samples_per_batch: 10,
            feature_scale: 0.1,
            seed,
        }
    }

    pub fn logistic(n: usize, m: usize, p: usize, heterogeneity: f64, seed: u64) -> Self {
        Self { kind: ProblemKind::Logistic, l2: 0.005, ..Self::quadratic(n, m, p, heterogeneity, seed) }
    }

    pub fn with_l1(mut self, l1: f64) -> Self {
        self.l1 = l1;
        self
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| StandardNormal.sample(rng))
}

/// Deterministic synthetic instance: same spec, same bits.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<CompositeProblem> {
    let SyntheticSpec { kind, n, m, p, heterogeneity: h, .. } = *spec;
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::InvalidParams(format!("dimensions must be positive: n={n} m={m} p={p}")));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidParams(format!("heterogeneity {h}")));
    }
    let mut rng = stream(spec.seed, 0, Purpose::Data);
    let reg = if spec.l1 > 0.0 { Regularizer::L1(spec.l1) } else { Regularizer::Zero };
    let batches = match kind {
        ProblemKind::Quadratic => {
            let center = gaussian_vec(&mut rng, p);
            let shifts: Vec<_> = (0..n).map(|_| gaussian_vec(&mut rng, p)).collect();
            (0..n)
                .map(|i| {
                    (0..m)
                        .map(|_| {
                            let g: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
                            let a = DMatrix::identity(p, p) + (&g * g.transpose()) * (0.5 / p as f64);
                            let jitter = gaussian_vec(&mut rng, p);
                            let target = &center + (&shifts[i] + jitter * 0.5) * h;
                            let b = &a * target;
                            SmoothTerm::Quadratic { a, b }
                        })
                        .collect()
                })
                .collect()
        }
        ProblemKind::Logistic => {
            if spec.samples_per_batch == 0 {
                return Err(Error::InvalidParams("samples_per_batch must be positive".into()));
            }
            let s = spec.samples_per_batch;
            let class_mean = gaussian_vec(&mut rng, p) * 0.5;
            let shifts: Vec<_> = (0..n).map(|_| gaussian_vec(&mut rng, p) * 0.5).collect();
            let tilt = h.min(1.0) * 0.4;
            (0..n)
                .map(|i| {
                    // node-dependent class balance emulates label-sorted splits
                    let pos = if n > 1 { 0.5 + tilt * (2.0 * i as f64 / (n - 1) as f64 - 1.0) } else { 0.5 };
                    (0..m)
                        .map(|_| {
                            let mut features = DMatrix::zeros(s, p);
                            let mut labels = DVector::zeros(s);
                            for k in 0..s {
                                let y = if rng.random::<f64>() < pos { 1.0 } else { 0.0 };
                                labels[k] = y;
                                let sign = 2.0 * y - 1.0;
                                for c in 0..p {
                                    let z: f64 = StandardNormal.sample(&mut rng);
                                    features[(k, c)] = spec.feature_scale * (z + sign * class_mean[c] + h * shifts[i][c]);
                                }
                            }
                            SmoothTerm::Logistic { features, labels, l2: spec.l2 }
                        })
                        .collect()
                })
                .collect()
        }
    };
    CompositeProblem::new(batches, reg)
}
