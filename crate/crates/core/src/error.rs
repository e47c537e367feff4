use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed row: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: duplicate rating for user {user}, item {item}")]
    Duplicate { line: usize, user: u64, item: u64 },

    #[error("{0}")]
    Domain(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("training diverged at epoch {epoch}: non-finite factor")]
    Diverged { epoch: usize },

    #[error("metric {0} is undefined: no evaluable user")]
    UndefinedMetric(&'static str),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("corrupt model file at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
