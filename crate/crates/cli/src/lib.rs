//! The `ssqn` command-line harness: synthetic data generation, single runs,
//! multi-seed benchmarks and the invariant audit.

pub mod commands;
pub mod output;
pub mod problem;
pub mod settings;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] spider_sqn::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("audit failed")]
    AuditFailed,
    #[error("all {0} runs failed")]
    AllFailed(usize),
}

impl CliError {
    /// 1 for audit failures, 3 for divergence, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::AuditFailed => 1,
            CliError::Core(spider_sqn::Error::Divergence { .. }) | CliError::AllFailed(_) => 3,
            _ => 2,
        }
    }
}
