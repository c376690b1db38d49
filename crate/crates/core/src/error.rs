use std::path::PathBuf;

use neurodecode_autodiff::AdError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("bad tensor file {path}: {detail}")]
    TensorFile { path: PathBuf, detail: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values during computation.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Numerical(_) | Self::Autodiff(AdError::NonFinite { .. }))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn data_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Data(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
