use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{what} file not found: {}", .path.display())]
    NotFound { what: &'static str, path: PathBuf },

    #[error("{0}")]
    Usage(String),

    #[error("cannot read {}: {source}", .path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {}: {source}", .path.display())]
    Write { path: PathBuf, source: std::io::Error },

    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] cohortflow_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NotFound { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
