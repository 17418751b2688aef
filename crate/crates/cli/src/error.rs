use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] skiplab_core::Error),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{0}")]
    Usage(String),
    #[error("dataset not found: {0}")]
    MissingData(PathBuf),
    #[error("output directory {0} is in use by another run; delete {0}/.lock if that run is gone")]
    Locked(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for missing or malformed data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingData(_) | CliError::Core(skiplab_core::Error::Data(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
