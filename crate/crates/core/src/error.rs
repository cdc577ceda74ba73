use thiserror::Error;

/// Failure categories shared by every module.
///
/// `kind()` groups them into validation, numerical and inconclusive classes,
/// which the CLI maps onto exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("degenerate order: {0}")]
    DegenerateOrder(String),
    #[error("precision error: {0}")]
    Precision(String),
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("out of regime: {0}")]
    OutOfRegime(String),
    #[error("unrecoverable degree: {0}")]
    Unrecoverable(String),
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },
    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Inconclusive,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Structural(_)
            | Error::Invalid(_)
            | Error::Domain(_)
            | Error::GridMismatch(_)
            | Error::Config { .. } => ErrorKind::Validation,
            Error::Inconclusive(_) => ErrorKind::Inconclusive,
            _ => ErrorKind::Numerical,
        }
    }

    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { pointer: pointer.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
