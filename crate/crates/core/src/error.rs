use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, geometries or option combinations.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// A caller violated an operation's contract (e.g. soft trace where hard decisions are required).
    #[error("contract error: {0}")]
    Contract(String),
    /// Broken internal state, such as a trainable parameter that never received a gradient.
    #[error("internal error: {0}")]
    Internal(String),
    /// Training produced a non-finite loss.
    #[error("divergence at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use data_err;
