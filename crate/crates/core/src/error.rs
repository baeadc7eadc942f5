use thiserror::Error;

use crate::angular::HalfInteger;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantum numbers: {0}")]
    InvalidQuantumNumbers(String),

    #[error("basis dimension overflow: n_max = {n_max} exceeds the supported maximum {limit}")]
    DimensionOverflow { n_max: u32, limit: u32 },

    #[error("eigendecomposition failed: {0}")]
    Diagonalization(String),

    #[error("levels come from different bases (n_max {0} vs {1})")]
    BasisMismatch(u32, u32),

    #[error("level {0} not found in the dressed spectrum")]
    LevelNotFound(String),

    #[error("empty scan: {0}")]
    EmptyScan(String),

    #[error("index {index} out of range (valid: {valid})")]
    IndexOutOfRange { index: usize, valid: String },

    #[error("degenerate levels split by {splitting} rad/s, above tolerance {tolerance} rad/s")]
    DegeneracyViolation { splitting: f64, tolerance: f64 },

    #[error("empty coupling list")]
    EmptyCouplings,

    #[error("sigma_z = {sigma_z} is not reachable with {n_bath} bath spins")]
    SectorParity { n_bath: usize, sigma_z: HalfInteger },

    #[error("too many spins for a dense basis: {n_bath} bath spins (limit {limit})")]
    TooManySpins { n_bath: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("too few extrema in channel {channel:?} to build an envelope ({found} found)")]
    TooFewExtrema { channel: String, found: usize },

    #[error("time series error: {0}")]
    TimeSeries(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
