use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An averaged statistic cannot be inverted even after regularization.
    #[error("singular sufficient statistic: {0}")]
    SingularStatistic(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A discrete search would exceed its exhaustive budget.
    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("estimation failed at iteration {iteration}: {message}")]
    FitFailed { iteration: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
