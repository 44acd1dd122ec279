use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("unknown entity id {0}")]
    UnknownEntity(u32),

    #[error("unknown relation id {0}")]
    UnknownRelation(u32),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("no cached embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty training dataset")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch} on question `{question}`")]
    NonFinite { epoch: usize, question: String },

    #[error("question `{0}` has no weakly supervised paths")]
    Unsupervisable(String),

    #[error("relation `{0}` is not in the generator vocabulary")]
    OutOfVocab(String),

    #[error("stale or incompatible artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("chat endpoint error: {0}")]
    Endpoint(String),

    #[error("gold answer set is empty")]
    EmptyGold,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a failure while working.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Artifact { .. } | Error::Parse { .. } | Error::UnknownLabel(_)
        )
    }
}
