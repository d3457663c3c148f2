use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("loss term `{term}` became non-finite at step {step}")]
    NonFinite { term: &'static str, step: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
