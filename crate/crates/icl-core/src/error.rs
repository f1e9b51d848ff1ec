use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is singular (eigenvalue {0:e})")]
    Singular(f64),
    #[error("non-finite value produced: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("{0}")]
    Diagnostic(String),
    #[error("all {0} restarts diverged")]
    AllRestartsFailed(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
