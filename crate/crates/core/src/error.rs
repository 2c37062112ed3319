use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("no records in {0}")]
    NoRecords(PathBuf),

    #[error("invalid span in mention {id}: {message}")]
    InvalidSpan { id: String, message: String },

    #[error("invalid mention {id}: {message}")]
    InvalidMention { id: String, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid synthetic corpus configuration: {0}")]
    Synthetic(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite gradient in {0}")]
    NonFinite(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("total batch weight is zero")]
    ZeroWeight,

    #[error("schema has a single label; no negatives exist")]
    NoNegatives,

    #[error("empty unlabeled pool")]
    EmptyPool,

    #[error("labeled set is empty")]
    EmptyLabeled,

    #[error("gold labels missing for mention {0}")]
    MissingGold(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("config: missing keys: {}", .0.join(", "))]
    MissingConfigKeys(Vec<String>),

    #[error("length mismatch: {gold} gold labels vs {pred} predictions")]
    LengthMismatch { gold: usize, pred: usize },

    #[error("report: {0}")]
    Report(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
