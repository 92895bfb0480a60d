use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the estimators and their supporting routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Matrix or vector shapes are incompatible, or a rank exceeds the panel size.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An input failed a structural check (symmetry, orthonormality, finiteness).
    #[error("validation error: {0}")]
    Validation(String),

    /// A factor column is linearly dependent on the preceding ones.
    #[error("degenerate factor {index}: {reason}")]
    DegenerateFactor { index: usize, reason: String },

    /// A least-squares design is rank-deficient or too ill-conditioned to solve.
    #[error("degenerate regression: {0}")]
    Degenerate(String),

    /// A covariance matrix has no Cholesky factor.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// Malformed input data; `line` is 1-based and counts the header.
    #[error("data error at row {line}: {message}")]
    Data { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Prefixes a degenerate-regression error with the series/time it came from.
    pub(crate) fn in_context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::Degenerate(msg) => Error::Degenerate(format!("{context}: {msg}")),
            other => other,
        }
    }
}
