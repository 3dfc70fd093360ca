use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("population matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularDesign { condition: f64 },

    #[error("bad replication: {0}")]
    BadReplication(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    /// First and last observations of a replicated block coincide.
    #[error("degenerate block {block}: first and last observations are equal")]
    DegenerateBlock { block: usize },

    #[error("wrong design shape: {0}")]
    WrongShape(String),

    #[error("population {block} has fewer than two replicates; its variance is not estimable")]
    NotEstimable { block: usize },

    #[error("population {block} has zero sample variance; the likelihood loss is undefined")]
    ZeroVariance { block: usize },

    #[error("non-positive value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("omega output {value} at index {index} exceeds the declared bound {bound}")]
    OmegaOutOfBounds {
        index: usize,
        value: f64,
        bound: f64,
    },

    #[error("estimator `{estimator}` cannot be scored with loss `{loss}`")]
    IncompatiblePair { estimator: String, loss: String },

    #[error("{failed} of {replicates} replicates failed; first failure: {first}")]
    DegenerateReplicates {
        failed: usize,
        replicates: usize,
        first: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
