use std::path::PathBuf;

use gean_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate map: {0}")]
    DegenerateMap(String),
    #[error("no fixation at frame {0}")]
    NoFixation(usize),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Errors caused by bad inputs (flags, manifests, files) rather than by a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Manifest(_)
                | Error::Format { .. }
                | Error::Io { .. }
                | Error::Tensor(TensorError::Config(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
