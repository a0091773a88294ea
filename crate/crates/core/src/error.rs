use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition on the inputs does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A numerical solver failed to converge or to bracket a root.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Missing or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs that should agree with each other do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Regression or likelihood estimation failed.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A data file row could not be accepted.
    #[error("load error in {file} at row {row}: {message}")]
    Load { file: String, row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn consistency(msg: impl Into<String>) -> Self {
        Error::Consistency(msg.into())
    }

    pub(crate) fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }

    /// True for failures of numerical routines (maps to CLI exit code 2).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Solver(_) | Error::Estimation(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
