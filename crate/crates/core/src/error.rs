use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty reference corpus")]
    EmptyCorpus,

    #[error("empty token")]
    EmptyToken,

    #[error("unmeasurable document: {0}")]
    Unmeasurable(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("length mismatch: {what} has {actual} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("prompt of {len} tokens exceeds the policy context of {limit}")]
    PromptTooLong { len: usize, limit: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("unsupported file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
