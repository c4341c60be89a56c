use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vectors do not span a plane of the requested dimension (wedge norm {volume:e} <= {tolerance:e})")]
    DegenerateSpan { volume: f64, tolerance: f64 },

    #[error("cone direction has zero length")]
    ZeroDirection,

    #[error("closed ball of radius {radius} carries no mass")]
    EmptyBall { radius: f64 },

    #[error("simplex has a repeated vertex at index {index} although h_min > 0")]
    RepeatedVertex { index: usize },

    #[error("no fat tuple outside the bad sets at radius {radius} (delta = {delta}, M = {threshold})")]
    NoFatTuple {
        radius: f64,
        delta: f64,
        threshold: f64,
    },

    #[error("neither balanced-balls branch certifies at radius {radius}: {reason}")]
    NoValidBranch { radius: f64, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed CSV at line {line}, column {column}: {message}")]
    Csv {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
