use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: all {lines} non-blank lines are malformed")]
    AllMalformed { path: PathBuf, lines: usize },

    #[error("no interactions left after filtering (min item degree {min_item_degree})")]
    EmptyAfterFilter { min_item_degree: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("vocab format error: {0}")]
    Vocab(String),

    #[error("{kind} id {id} out of range (count {count})")]
    OutOfRange {
        kind: &'static str,
        id: usize,
        count: usize,
    },

    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset fingerprint mismatch: checkpoint {expected}, data {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("objective became non-finite in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("unknown user token {0:?}")]
    UnknownUser(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
