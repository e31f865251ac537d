//! Unbiased stochastic compression with exact bit accounting.
//!
//! The quantizer splits a vector into blocks of at most `block_size` entries
//! and, per block with `s = ‖x‖∞`, sends
//!
//! ```text
//! y_i = s · 2^{-(b-1)} · sign(x_i) · floor(2^{b-1} |x_i| / s + u_i),   u_i ~ U[0, 1)
//! ```
//!
//! so only the norm, the signs and the integer levels go over the wire.
//! Each block is charged 32 bits for its norm and `b` bits per entry.

use rand::Rng;

use crate::error::{Error, Result};

/// Bits charged for one uncompressed scalar and for one block norm.
pub const FLOAT_BITS: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressorKind {
    Identity,
    QuantInfNorm { bits: u32, block_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    /// User-supplied noise-to-signal constant. `None` means the analytic bound.
    pub c_override: Option<f64>,
}

impl CompressorSpec {
    pub fn identity() -> Self {
        Self { kind: CompressorKind::Identity, c_override: None }
    }

    pub fn quant_inf_norm(bits: u32, block_size: usize) -> Result<Self> {
        let spec = Self { kind: CompressorKind::QuantInfNorm { bits, block_size }, c_override: None };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_c(mut self, c: f64) -> Result<Self> {
        self.c_override = Some(c);
        self.check()?;
        Ok(self)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, CompressorKind::Identity)
    }

    pub fn check(&self) -> Result<()> {
        match self.kind {
            CompressorKind::Identity => {
                if let Some(c) = self.c_override {
                    if c != 0.0 {
                        return Err(Error::InvalidCompressor(format!("identity compressor must have C = 0, got {c}")));
                    }
                }
            }
            CompressorKind::QuantInfNorm { bits, block_size } => {
                if !(1..=31).contains(&bits) {
                    return Err(Error::InvalidCompressor(format!("bits must be in 1..=31, got {bits}")));
                }
                if block_size == 0 {
                    return Err(Error::InvalidCompressor("block size must be at least 1".into()));
                }
                if let Some(c) = self.c_override {
                    if !(c.is_finite() && c >= 0.0) {
                        return Err(Error::InvalidCompressor(format!("C must be finite and nonnegative, got {c}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Worst-case noise-to-signal ratio `min(B, p) / 4^b` for vectors of length `p`.
    pub fn analytic_c(&self, p: usize) -> f64 {
        match self.kind {
            CompressorKind::Identity => 0.0,
            CompressorKind::QuantInfNorm { bits, block_size } => {
                block_size.min(p) as f64 / 4f64.powi(bits as i32)
            }
        }
    }

    /// The constant `C` fed to parameter selection: the override if present,
    /// otherwise the analytic bound.
    pub fn c_param(&self, p: usize) -> f64 {
        match self.kind {
            CompressorKind::Identity => 0.0,
            _ => self.c_override.unwrap_or_else(|| self.analytic_c(p)),
        }
    }
}

/// One quantized block as sent on the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantBlock {
    pub norm: f64,
    /// `true` for a negative entry.
    pub negative: Vec<bool>,
    pub levels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Raw(Vec<f64>),
    Quantized { bits: u32, blocks: Vec<QuantBlock> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedMessage {
    pub payload: Payload,
    pub total_bits: u64,
}

/// Bits needed to send one compressed `p`-vector.
pub fn bit_count(spec: &CompressorSpec, p: usize) -> u64 {
    match spec.kind {
        CompressorKind::Identity => FLOAT_BITS * p as u64,
        CompressorKind::QuantInfNorm { bits, block_size } => {
            FLOAT_BITS * p.div_ceil(block_size) as u64 + bits as u64 * p as u64
        }
    }
}

fn decode_block(bits: u32, block: &QuantBlock, out: &mut Vec<f64>) -> Result<()> {
    let top = 1u32 << (bits - 1);
    let scale = block.norm * 0.5f64.powi(bits as i32 - 1);
    if block.negative.len() != block.levels.len() {
        return Err(Error::MalformedMessage("sign and level counts differ".into()));
    }
    for (&neg, &level) in block.negative.iter().zip(&block.levels) {
        if level > top {
            return Err(Error::MalformedMessage(format!("level {level} exceeds 2^(b-1) = {top}")));
        }
        let mag = scale * level as f64;
        out.push(if neg { -mag } else { mag });
    }
    Ok(())
}

/// Reconstructs the vector carried by `msg`.
pub fn decode(msg: &CompressedMessage) -> Result<Vec<f64>> {
    match &msg.payload {
        Payload::Raw(v) => Ok(v.clone()),
        Payload::Quantized { bits, blocks } => {
            if !(1..=31).contains(bits) {
                return Err(Error::MalformedMessage(format!("bits = {bits}")));
            }
            let mut out = Vec::with_capacity(blocks.iter().map(|b| b.levels.len()).sum());
            for block in blocks {
                if !(block.norm >= 0.0 && block.norm.is_finite()) {
                    return Err(Error::MalformedMessage(format!("block norm {}", block.norm)));
                }
                decode_block(*bits, block, &mut out)?;
            }
            Ok(out)
        }
    }
}

/// Compresses `x`, returning the receiver-side vector and the wire message.
pub fn compress<R: Rng + ?Sized>(spec: &CompressorSpec, x: &[f64], rng: &mut R) -> Result<(Vec<f64>, CompressedMessage)> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("entry {i} of compressor input is {}", x[i])));
    }
    spec.check()?;
    let total_bits = bit_count(spec, x.len());
    match spec.kind {
        CompressorKind::Identity => {
            Ok((x.to_vec(), CompressedMessage { payload: Payload::Raw(x.to_vec()), total_bits }))
        }
        CompressorKind::QuantInfNorm { bits, block_size } => {
            let top = (1u32 << (bits - 1)) as f64;
            let mut blocks = Vec::with_capacity(x.len().div_ceil(block_size));
            let mut y = Vec::with_capacity(x.len());
            for chunk in x.chunks(block_size) {
                let norm = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let negative: Vec<bool> = chunk.iter().map(|v| *v < 0.0).collect();
                let levels: Vec<u32> = if norm == 0.0 {
                    vec![0; chunk.len()]
                } else {
                    chunk
                        .iter()
                        .map(|v| {
                            let u: f64 = rng.random();
                            // |v| / norm <= 1 and u < 1, so the level never exceeds 2^(b-1)
                            ((top * v.abs() / norm + u).floor() as u32).min(top as u32)
                        })
                        .collect()
                };
                let block = QuantBlock { norm, negative, levels };
                decode_block(bits, &block, &mut y)?;
                blocks.push(block);
            }
            Ok((y, CompressedMessage { payload: Payload::Quantized { bits, blocks }, total_bits }))
        }
    }
}

/// Exact per-coordinate variance `E(Q(x)_i - x_i)²` of the compressor at `x`.
/// For the quantizer this is `Δ² f (1 - f)` with `Δ = ‖x_block‖∞ / 2^(b-1)`
/// and `f` the fractional part of `|x_i| / Δ`.
pub fn coordinate_variance(spec: &CompressorSpec, x: &[f64]) -> Vec<f64> {
    match spec.kind {
        CompressorKind::Identity => vec![0.0; x.len()],
        CompressorKind::QuantInfNorm { bits, block_size } => {
            let top = (1u32 << (bits - 1)) as f64;
            let mut out = Vec::with_capacity(x.len());
            for chunk in x.chunks(block_size) {
                let norm = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for v in chunk {
                    if norm == 0.0 {
                        out.push(0.0);
                        continue;
                    }
                    let s = top * v.abs() / norm;
                    let f = s - s.floor();
                    let delta = norm / top;
                    out.push(delta * delta * f * (1.0 - f));
                }
            }
            out
        }
    }
}

/// Per-vector outcome of [`estimate_c`].
#[derive(Clone, Debug)]
pub struct VectorStats {
    /// Empirical `E‖Q(x) - x‖² / ‖x‖²`.
    pub noise_to_signal: f64,
    /// `‖mean(Q(x)) - x‖`.
    pub bias_norm: f64,
    /// Largest coordinatewise `|mean - x| / sqrt(var / N)` with the exact
    /// variance from [`coordinate_variance`]; zero-variance coordinates
    /// contribute only if their mean is off, as `+inf`.
    pub max_bias_z: f64,
}

#[derive(Clone, Debug)]
pub struct CEstimate {
    pub c_hat: f64,
    /// Largest bias norm over the sampled vectors.
    pub bias: f64,
    /// Zero vectors drawn by the sampler and skipped.
    pub skipped: usize,
    pub per_vector: Vec<VectorStats>,
}

/// Monte-Carlo noise-to-signal estimate: for each of `vectors` test vectors,
/// compress it `trials` times.
pub fn estimate_c<R, S>(spec: &CompressorSpec, mut sampler: S, vectors: usize, trials: usize, rng: &mut R) -> Result<CEstimate>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> Vec<f64>,
{
    if trials < 1000 {
        return Err(Error::InvalidParams(format!("estimate_c needs at least 1000 trials, got {trials}")));
    }
    let mut per_vector = Vec::with_capacity(vectors);
    let mut skipped = 0;
    for _ in 0..vectors {
        let x = sampler(rng);
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            skipped += 1;
            continue;
        }
        let p = x.len();
        let mut sum = vec![0.0; p];
        let mut err_acc = 0.0;
        for _ in 0..trials {
            let (y, _) = compress(spec, &x, rng)?;
            let mut e = 0.0;
            for i in 0..p {
                // accumulate deviations so an exact compressor reports exactly zero bias
                let d = y[i] - x[i];
                sum[i] += d;
                e += d * d;
            }
            err_acc += e;
        }
        let nt = trials as f64;
        let var = coordinate_variance(spec, &x);
        let mut bias_sq = 0.0;
        let mut max_z = 0.0f64;
        for i in 0..p {
            let d = sum[i] / nt;
            bias_sq += d * d;
            let se = (var[i] / nt).sqrt();
            let z = if se > 0.0 {
                d.abs() / se
            } else if d != 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_z = max_z.max(z);
        }
        per_vector.push(VectorStats {
            noise_to_signal: err_acc / nt / norm_sq,
            bias_norm: bias_sq.sqrt(),
            max_bias_z: max_z,
        });
    }
    let c_hat = per_vector.iter().map(|s| s.noise_to_signal).fold(0.0, f64::max);
    let bias = per_vector.iter().map(|s| s.bias_norm).fold(0.0, f64::max);
    Ok(CEstimate { c_hat, bias, skipped, per_vector })
}
