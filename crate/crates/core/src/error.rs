use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no events")]
    NoEvents,

    #[error("zero-width reference range for feature `{0}`")]
    ZeroWidthRange(String),

    #[error("undefined similarity: zero vector")]
    UndefinedSimilarity,

    #[error("undefined {metric}: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    #[error("unknown knowledge-graph node `{0}`")]
    UnknownNode(String),

    #[error("embedding failed for node `{node}`: {source}")]
    NodeEmbedding {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("embedding endpoint {endpoint} unavailable: {message}")]
    Transport { endpoint: String, message: String },

    #[error("extraction round {round} failed: {source}")]
    ExtractionRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("corrupted cache entry {path}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    #[error("corrupted file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("bootstrap retry budget exhausted after {0} single-class resamples")]
    BootstrapExhausted(usize),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Transport-level failures may succeed on a later attempt.
    pub fn is_retriable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::ExtractionRound { source, .. } => source.is_retriable(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
