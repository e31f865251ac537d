//! Communication graphs and their mixing matrices.
//!
//! A [`Network`] owns a dense symmetric doubly stochastic matrix `W` over an
//! undirected connected graph. Construction validates the matrix and caches
//! the eigendecomposition of `I - W`: the parameter formulas need its extreme
//! nonzero eigenvalues, and the Lyapunov diagnostics need its pseudo-inverse.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance for every mixing-matrix assumption check.
pub const ASSUMPTION_TOL: f64 = 1e-10;
/// Eigenvalues of `I - W` below this magnitude count as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-9;

/// Spectral summary of `I - W`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralInfo {
    pub lam_max: f64,
    /// Smallest nonzero eigenvalue.
    pub lam_min_nz: f64,
    /// `lam_max / lam_min_nz`.
    pub kappa_g: f64,
}

#[derive(Clone, Debug)]
pub struct Network {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    w: DMatrix<f64>,
    spectral: SpectralInfo,
    /// Ascending eigenvalues of `I - W`.
    laplacian_eigenvalues: Vec<f64>,
    /// Moore-Penrose pseudo-inverse of `I - W`.
    laplacian_pinv: DMatrix<f64>,
}

fn normalize_edge(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Ring over `n >= 3` nodes: each node averages itself and its two 1-hop
/// neighbours, with `neighbor_weight` on each neighbour.
pub fn build_ring(n: usize, neighbor_weight: f64) -> Result<Network> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!("ring needs at least 3 nodes, got {n}")));
    }
    if !(neighbor_weight > 0.0 && neighbor_weight < 0.5) {
        return Err(Error::InvalidMixingWeight(neighbor_weight));
    }
    let edges: BTreeSet<_> = (0..n).map(|i| normalize_edge(i, (i + 1) % n)).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        // n = 3 makes both neighbours adjacent to each other; the weights still add up
        w[(i, (i + 1) % n)] += neighbor_weight;
        w[(i, (i + n - 1) % n)] += neighbor_weight;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Network::new(n, edges, w)
}

/// Fully connected graph with exact averaging, `W = 11ᵀ/n`.
pub fn build_complete(n: usize) -> Result<Network> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("complete graph needs at least 2 nodes, got {n}")));
    }
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    Network::new(n, edges, DMatrix::from_element(n, n, 1.0 / n as f64))
}

/// Arbitrary undirected graph with Metropolis-Hastings weights
/// `w_ij = 1 / (1 + max(deg_i, deg_j))`.
pub fn build_from_edges(n: usize, edge_list: &[(usize, usize)]) -> Result<Network> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("graph needs at least 2 nodes, got {n}")));
    }
    let mut edges = BTreeSet::new();
    for &(i, j) in edge_list {
        if i >= n || j >= n {
            return Err(Error::InvalidTopology(format!("edge ({i}, {j}) out of range for {n} nodes")));
        }
        if i == j {
            return Err(Error::InvalidTopology(format!("self loop at node {i}")));
        }
        edges.insert(normalize_edge(i, j));
    }
    let mut degree = vec![0usize; n];
    for &(i, j) in &edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in &edges {
        let wij = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Network::new(n, edges, w)
}

/// Checks every mixing-matrix assumption and returns the spectral summary.
pub fn validate(n: usize, edges: &BTreeSet<(usize, usize)>, w: &DMatrix<f64>) -> Result<SpectralInfo> {
    validate_with_eigen(n, edges, w).map(|(info, _)| info)
}

fn validate_with_eigen(
    n: usize,
    edges: &BTreeSet<(usize, usize)>,
    w: &DMatrix<f64>,
) -> Result<(SpectralInfo, SymmetricEigen<f64, nalgebra::Dyn>)> {
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", w.nrows(), w.ncols()),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::MixingMatrix("non-finite entry".into()));
    }
    for i in 0..n {
        let s: f64 = w.row(i).sum();
        if (s - 1.0).abs() > ASSUMPTION_TOL {
            return Err(Error::MixingMatrix(format!("row {i} sums to {s}, not 1")));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if (w[(i, j)] - w[(j, i)]).abs() > ASSUMPTION_TOL {
                return Err(Error::MixingMatrix(format!("asymmetric at ({i}, {j})")));
            }
            if !edges.contains(&(i, j)) && (w[(i, j)].abs() > ASSUMPTION_TOL) {
                return Err(Error::MixingMatrix(format!("nonzero weight on non-edge ({i}, {j})")));
            }
        }
    }
    let laplacian = DMatrix::identity(n, n) - w;
    let eig = SymmetricEigen::new(laplacian);
    let mut lams: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    lams.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // eigenvalues of W are 1 - lam; (-1, 1] maps to [0, 2)
    if lams[0] < -ASSUMPTION_TOL {
        return Err(Error::MixingMatrix(format!("W has eigenvalue {} > 1", 1.0 - lams[0])));
    }
    let lam_max = lams[n - 1];
    if lam_max >= 2.0 - ASSUMPTION_TOL {
        return Err(Error::MixingMatrix(format!("W has eigenvalue {} <= -1", 1.0 - lam_max)));
    }
    let zeros = lams.iter().filter(|l| l.abs() < ZERO_EIGENVALUE_TOL).count();
    if zeros != 1 {
        return Err(Error::MixingMatrix(format!(
            "eigenvalue 1 of W has multiplicity {zeros}; graph is disconnected"
        )));
    }
    let lam_min_nz = lams.iter().copied().find(|l| l.abs() >= ZERO_EIGENVALUE_TOL).unwrap();
    Ok((SpectralInfo { lam_max, lam_min_nz, kappa_g: lam_max / lam_min_nz }, eig))
}

impl Network {
    /// Validates `w` against `edges` and caches the spectrum of `I - W`.
    pub fn new(n: usize, edges: BTreeSet<(usize, usize)>, w: DMatrix<f64>) -> Result<Self> {
        let (spectral, eig) = validate_with_eigen(n, &edges, &w)?;
        let mut pinv = DMatrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() >= ZERO_EIGENVALUE_TOL {
                let u = eig.eigenvectors.column(k);
                pinv += (&u * u.transpose()) / lam;
            }
        }
        let mut laplacian_eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        laplacian_eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { n, edges, w, spectral, laplacian_eigenvalues, laplacian_pinv: pinv })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn spectral(&self) -> SpectralInfo {
        self.spectral
    }

    /// Re-runs the assumption checks on the stored matrix.
    pub fn validate(&self) -> Result<SpectralInfo> {
        validate(self.n, &self.edges, &self.w)
    }

    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.laplacian_eigenvalues
    }

    /// `(I - W)^†`.
    pub fn laplacian_pinv(&self) -> &DMatrix<f64> {
        &self.laplacian_pinv
    }

    /// One gossip round, `W·M`.
    pub fn mix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", self.n),
                got: format!("{} rows", m.nrows()),
            });
        }
        Ok(&self.w * m)
    }

    /// `(I - W)·M`.
    pub fn laplacian_apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m - &self.w * m
    }

    /// `‖M‖²_{(I-W)†} = tr(Mᵀ (I-W)† M)`. Only meaningful when the columns of
    /// `M` are orthogonal to the all-ones vector.
    pub fn pinv_norm_sq(&self, m: &DMatrix<f64>) -> f64 {
        let pm = &self.laplacian_pinv * m;
        m.component_mul(&pm).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circulant_oracle(n: usize, w: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|k| (2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) * w).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn ring_of_eight_rows() {
        let net = build_ring(8, 1.0 / 3.0).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let d = (i as i64 - j as i64).rem_euclid(8);
                let expect = if d == 0 || d == 1 || d == 7 { 1.0 / 3.0 } else { 0.0 };
                assert!((net.w()[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ring_of_three_is_complete_averaging() {
        let net = build_ring(3, 1.0 / 3.0).unwrap();
        for v in net.w().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ring_spectrum_matches_circulant_form() {
        for n in [4usize, 5, 8, 13, 32] {
            let net = build_ring(n, 1.0 / 3.0).unwrap();
            let oracle = circulant_oracle(n, 1.0 / 3.0);
            for (a, b) in net.laplacian_eigenvalues().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
        let s = build_ring(8, 1.0 / 3.0).unwrap().spectral();
        assert!((s.lam_max - 4.0 / 3.0).abs() < 1e-12);
        assert!((s.lam_min_nz - (2.0 - 2f64.sqrt()) / 3.0).abs() < 1e-12);
        let kappa = (4.0 / 3.0) / ((2.0 - 2f64.sqrt()) / 3.0);
        assert!((s.kappa_g - kappa).abs() < 1e-10);
        assert!((s.kappa_g - 6.8284).abs() < 1e-4);
    }

    #[test]
    fn ring_rejects_bad_inputs() {
        assert!(matches!(build_ring(2, 0.3), Err(Error::InvalidTopology(_))));
        assert!(matches!(build_ring(5, 0.5), Err(Error::InvalidMixingWeight(_))));
        assert!(matches!(build_ring(5, 0.0), Err(Error::InvalidMixingWeight(_))));
    }

    #[test]
    fn complete_graph() {
        let net = build_complete(2).unwrap();
        assert!(net.w().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let s4 = build_complete(4).unwrap();
        let l = s4.laplacian_eigenvalues();
        assert!(l[0].abs() < 1e-12);
        assert!(l[1..].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((s4.spectral().kappa_g - 1.0).abs() < 1e-12);
        assert!((build_complete(5).unwrap().spectral().kappa_g - 1.0).abs() < 1e-12);
        assert!(build_complete(1).is_err());
    }

    #[test]
    fn complete_mix_is_exact_average() {
        let net = build_complete(8).unwrap();
        let m = DMatrix::from_fn(8, 3, |i, j| (i * 3 + j) as f64 * 0.7 - 2.0);
        let mixed = net.mix(&m).unwrap();
        for j in 0..3 {
            let mean = m.column(j).mean();
            for i in 0..8 {
                assert!((mixed[(i, j)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mix_fixes_consensus_and_checks_shape() {
        let net = build_ring(8, 1.0 / 3.0).unwrap();
        let c = [1.5, -2.0, 0.25];
        let m = DMatrix::from_fn(8, 3, |_, j| c[j]);
        let mixed = net.mix(&m).unwrap();
        assert!((mixed - &m).abs().max() < 1e-15);
        assert!(net.mix(&DMatrix::zeros(7, 3)).is_err());
    }

    #[test]
    fn mix_of_indicator_selects_neighbourhood() {
        let net = build_ring(8, 1.0 / 3.0).unwrap();
        let mut e = DMatrix::zeros(8, 1);
        e[(0, 0)] = 1.0;
        let out = net.mix(&e).unwrap();
        for i in 0..8 {
            let expect = if i == 0 || i == 1 || i == 7 { 1.0 / 3.0 } else { 0.0 };
            assert!((out[(i, 0)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn scaled_row_is_rejected() {
        let net = build_ring(8, 1.0 / 3.0).unwrap();
        let mut w = net.w().clone();
        for j in 0..8 {
            w[(2, j)] *= 1.01;
        }
        let err = validate(8, net.edges(), &w).unwrap_err();
        assert!(err.to_string().contains("sums to"), "{err}");
    }

    #[test]
    fn asymmetric_and_disconnected_are_rejected() {
        let net = build_ring(4, 0.25).unwrap();
        let mut w = net.w().clone();
        w[(0, 1)] += 0.05;
        w[(0, 0)] -= 0.05;
        assert!(validate(4, net.edges(), &w).unwrap_err().to_string().contains("asymmetric"));

        let err = build_from_edges(4, &[(0, 1), (2, 3)]).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn non_edge_weight_is_rejected() {
        let net = build_ring(5, 0.25).unwrap();
        let mut w = net.w().clone();
        w[(0, 2)] = 0.1;
        w[(2, 0)] = 0.1;
        w[(0, 0)] -= 0.1;
        w[(2, 2)] -= 0.1;
        assert!(validate(5, net.edges(), &w).unwrap_err().to_string().contains("non-edge"));
    }

    #[test]
    fn metropolis_weights_on_a_path() {
        let net = build_from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let w = net.w();
        assert!((w[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[(1, 2)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(net.spectral().kappa_g > 1.0);
    }

    #[test]
    fn pinv_inverts_laplacian_on_mean_free_space() {
        let net = build_ring(8, 1.0 / 3.0).unwrap();
        let mut m = DMatrix::from_fn(8, 2, |i, j| ((i + 1) * (j + 2)) as f64);
        for j in 0..2 {
            let mean = m.column(j).mean();
            m.column_mut(j).add_scalar_mut(-mean);
        }
        let back = net.laplacian_apply(&(net.laplacian_pinv() * &m));
        assert!((back - &m).abs().max() < 1e-10);
    }
}
