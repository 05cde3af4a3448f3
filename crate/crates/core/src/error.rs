use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("edge endpoint {0:?} is not a corpus document")]
    UnknownEndpoint(String),

    #[error("self-loop on document {0:?}")]
    SelfLoop(String),

    #[error("invalid {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("row {id:?}: {message}")]
    BadVector { id: String, message: String },

    #[error("document sets differ: only in predicted {only_pred:?}, only in gold {only_gold:?}")]
    DocSetMismatch {
        only_pred: Vec<String>,
        only_gold: Vec<String>,
    },

    #[error("document {0:?} has no gold_cluster label")]
    Unlabeled(String),

    #[error("no external score for candidate pair ({0:?}, {1:?})")]
    MissingScore(String, String),

    #[error("document {0:?} is empty after normalization")]
    EmptyDocument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}
