//! Compressed communication with error feedback.

use nalgebra::DMatrix;
use rand::Rng;

use crate::compression::{bit_count, compress, CompressorSpec};
use crate::error::{Error, Result};
use crate::topology::Network;

/// Outcome of one communication round.
#[derive(Clone, Debug)]
pub struct CommOutput {
    /// `Ẑ = H + Q`.
    pub z_hat: DMatrix<f64>,
    /// `Ẑ_w = H_w + W·Q`.
    pub z_hat_w: DMatrix<f64>,
    /// `(1-α)H + αẐ`.
    pub h: DMatrix<f64>,
    /// `(1-α)H_w + αẐ_w`.
    pub h_w: DMatrix<f64>,
    /// Bits sent by all nodes this round.
    pub bits: u64,
}

/// Each node compresses the difference `Z - H`, broadcasts it, and both the
/// local state `H` and the neighbour aggregate `H_w` track the reconstruction.
///
/// With the identity compressor the outputs are exactly `Ẑ = Z` and `Ẑ_w = W·Z`.
pub fn comm<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    h: &DMatrix<f64>,
    h_w: &DMatrix<f64>,
    alpha: f64,
    compressor: &CompressorSpec,
    net: &Network,
    rng: &mut R,
) -> Result<CommOutput> {
    let (n, p) = z.shape();
    if n != net.n() || h.shape() != (n, p) || h_w.shape() != (n, p) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{p} for Z, H, H_w", net.n()),
            got: format!("{:?}, {:?}, {:?}", z.shape(), h.shape(), h_w.shape()),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let (z_hat, z_hat_w) = if compressor.is_identity() {
        (z.clone(), net.mix(z)?)
    } else {
        let mut q = DMatrix::zeros(n, p);
        for i in 0..n {
            let diff: Vec<f64> = (0..p).map(|j| z[(i, j)] - h[(i, j)]).collect();
            let (y, _msg) = compress(compressor, &diff, rng)?;
            for (j, v) in y.into_iter().enumerate() {
                q[(i, j)] = v;
            }
        }
        (h + &q, h_w + net.mix(&q)?)
    };
    let h_next = h * (1.0 - alpha) + &z_hat * alpha;
    let h_w_next = h_w * (1.0 - alpha) + &z_hat_w * alpha;
    Ok(CommOutput { z_hat, z_hat_w, h: h_next, h_w: h_w_next, bits: n as u64 * bit_count(compressor, p) })
}
