use thiserror::Error;

/// Errors produced by the CORL toolkit.
#[derive(Debug, Error)]
pub enum CorlError {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("state {state:?} lies outside the declared region")]
    OutOfRegion { state: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no data for type {type_id} action {action}: have {have} samples, need {need}")]
    NoData {
        type_id: usize,
        action: usize,
        have: usize,
        need: usize,
    },

    #[error("unsupported covariance: {0}")]
    UnsupportedCovariance(String),

    #[error("unsupported dimension {0}: numeric oracle handles at most 3")]
    UnsupportedDimension(usize),

    #[error("invalid epsilon {0}: the variance sample bound needs 0 < epsilon < 1")]
    InvalidEpsilon(f64),

    #[error(
        "good-sample radius B = {b} is too small: need B > {min_radius:.6} so that delta > 3 * n_dim * p0"
    )]
    RadiusTooSmall { b: f64, min_radius: f64 },

    #[error("grid too large: {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

pub type Result<T, E = CorlError> = std::result::Result<T, E>;
