use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data or arguments: malformed files, invalid configs.
    Input,
    /// The inputs are individually valid but the experiment cannot run on them.
    Precondition,
    /// Everything else.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("duplicate utterance id {id:?} (line {line})")]
    DuplicateId { id: String, line: usize },

    #[error("label mapping error: no rule for label(s) {}", .labels.join(", "))]
    UnmappedLabels { labels: Vec<String> },

    #[error("invalid label mapping: {0}")]
    InvalidMapping(String),

    #[error("embedding format error at line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label vocabulary mismatch: {0}")]
    LabelMismatch(String),

    #[error("embedding mismatch: {0}")]
    EmbeddingMismatch(String),

    #[error("corpus has {size} utterances, fewer than k = {k}")]
    CorpusTooSmall { size: usize, k: usize },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Ingest { .. }
            | Error::DuplicateId { .. }
            | Error::UnmappedLabels { .. }
            | Error::InvalidMapping(_)
            | Error::EmbeddingFormat { .. }
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Input,
            Error::LabelMismatch(_)
            | Error::EmbeddingMismatch(_)
            | Error::CorpusTooSmall { .. } | Error::EmptyCorpus(_) => {
                ErrorKind::Precondition
            }
            Error::Fold { source, .. } => source.kind(),
            Error::Shape(_) => ErrorKind::Internal,
        }
    }
}
