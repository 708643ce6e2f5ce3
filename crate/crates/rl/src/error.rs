use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    /// Invalid or inconsistent configuration; the run never started.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite {0}; update aborted, parameters unchanged")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Run(String),

    #[error(transparent)]
    Policy(#[from] nego_policy::PolicyError),

    #[error(transparent)]
    Core(#[from] nego_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl RlError {
    pub fn is_config(&self) -> bool {
        matches!(self, RlError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, RlError>;

pub(crate) fn config(msg: impl Into<String>) -> RlError {
    RlError::Config(msg.into())
}

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RlError {
    let path = path.into();
    move |source| RlError::Io { path, source }
}
