//! Run configuration, training pipeline and benchmark reporting for the
//! `sgm` command-line tool.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod svg;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Core(#[from] sgm_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Diverged(_) => 3,
            Self::Core(sgm_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
