//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing or invalid key {key:?}")]
    Schema { line: usize, key: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("sample size {k} exceeds dataset size {n}")]
    SampleSize { k: usize, n: usize },

    #[error("token {0:?} is not in the scorer vocabulary")]
    OutOfVocabulary(String),

    #[error("prompt layout does not match the scorer layout: {0}")]
    LayoutMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("scorer of kind {0:?} is not trainable")]
    NotTrainable(&'static str),

    #[error("scorer of kind {0:?} exposes no embeddings")]
    NoEmbeddings(&'static str),

    #[error("unknown prompt slot {0}")]
    UnknownSlot(u8),

    #[error("sequence of {got} tokens exceeds the configured maximum of {max}")]
    SequenceTooLong { got: usize, max: usize },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
