use std::path::PathBuf;

use crate::corpus::{DomainId, ItemId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("item {0:?} has a title longer than the encoder input limit ({1} tokens)")]
    TitleTooLong(String, usize),

    #[error("input of {len} tokens exceeds max_len {max_len}")]
    InputTooLong { len: usize, max_len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain {domain:?} has {available} negative candidates, {requested} requested")]
    InsufficientCandidates {
        domain: String,
        available: usize,
        requested: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no per-domain loss observed yet")]
    NoLossObserved,

    #[error("unknown domain {0:?}")]
    UnknownDomain(DomainId),

    #[error("target item {0:?} is not among the candidates")]
    TargetNotCandidate(ItemId),

    #[error("domain {0:?} was part of training")]
    DomainSeenInTraining(DomainId),

    #[error("reports cover different domain sets")]
    DomainMismatch,

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
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
