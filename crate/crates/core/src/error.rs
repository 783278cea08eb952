use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame size {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parent assignment contains a cycle through object {0}")]
    Cycle(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("training loss became non-finite at batch {batch} (epoch {epoch})")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{}: corrupt header", path.display())]
    CorruptHeader { path: PathBuf },

    #[error("{}: expected {expected} bytes of payload, found {actual}", path.display())]
    TruncatedFile { path: PathBuf, expected: u64, actual: u64 },

    #[error("{}: file not found", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed document: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}
