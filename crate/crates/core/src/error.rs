use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid mixing weight {0}: must lie in (0, 1/2)")]
    InvalidMixingWeight(f64),
    #[error("mixing matrix violates its assumptions: {0}")]
    MixingMatrix(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("invalid compressor: {0}")]
    InvalidCompressor(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("problem is not strongly convex (mu = {0})")]
    NotStronglyConvex(f64),
    #[error("reference solver did not converge after {iterations} iterations (last step {last_step:e})")]
    ReferenceNotConverged { iterations: usize, last_step: f64 },
    #[error("oracle not initialized: {0}")]
    OracleNotInitialized(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("iterates diverged at iteration {k}: {reason}")]
    Divergence { k: usize, reason: String },
    #[error("state corrupted: {0}")]
    StateCorruption(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
