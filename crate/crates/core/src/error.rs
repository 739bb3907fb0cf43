use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("autocovariance tail could not be certified: {0}")]
    Precision(String),

    #[error("autocovariance sequence is not positive definite (prediction variance {variance:e} at order {order})")]
    NotPositiveDefinite { order: usize, variance: f64 },

    #[error("singular Gram matrix at order {order}: {reason}")]
    Singular { order: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("matrix of dimension {dim} exceeds materialization cap {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    NotConverged { iterations: usize, last_estimate: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("design matrix has rank {rank} < {columns} columns")]
    RankDeficient { rank: usize, columns: usize },

    #[error("normal matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
