use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("component index {index} out of range for {n} components")]
    Oracle { index: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
