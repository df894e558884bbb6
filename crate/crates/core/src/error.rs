use thiserror::Error;

use crate::noise::NoiseSeed;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation too small: leakage {leakage:.3e} exceeds {tolerance:.1e} at dimension {dim}")]
    TruncationTooSmall { leakage: f64, tolerance: f64, dim: usize },

    #[error("stiffness guard violated: dt * {rate_name} = {product:.3e} exceeds {limit}")]
    Stiffness {
        rate_name: &'static str,
        product: f64,
        limit: f64,
    },

    #[error("coefficient F{index} diverged (|F| > 1e6) at t = {time:.6}")]
    CoefficientDivergence { index: usize, time: f64 },

    #[error("trajectory {seed} diverged (|psi| > 1e8) at t = {time:.6}")]
    TrajectoryDivergence { seed: NoiseSeed, time: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("trace too short: {len} points, need at least {min}")]
    TraceTooShort { len: usize, min: usize },

    #[error("auxiliary mode overflow: population {population:.4} exceeds {limit:.4} at t = {time:.6}")]
    AuxiliaryOverflow {
        population: f64,
        limit: f64,
        time: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("config parse error at line {line}, column {column}: {reason}")]
    ConfigParse { line: usize, column: usize, reason: String },

    #[error("invalid config key `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("csv error in {path}: {reason}")]
    Csv { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
