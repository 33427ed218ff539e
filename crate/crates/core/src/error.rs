use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum RobotError {
    /// Inputs violate a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative numerical routine did not finish.
    #[error("solver failure: {message}")]
    SolverFailure { message: String },

    /// A higher-level procedure could not produce a result (e.g. every row
    /// was classified as an outlier).
    #[error("algorithm failure: {0}")]
    AlgorithmFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl RobotError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RobotError::InvalidArgument(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        RobotError::SolverFailure {
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RobotError>;
