use std::io;

use thiserror::Error;

/// Errors produced by every stage of the toolkit.
///
/// Configuration problems map to exit status 2, everything else to 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("rejected record: {0}")]
    RejectedRecord(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("bad {what} file: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("incompatible tensor `{name}`: {reason}")]
    IncompatibleTensor { name: String, reason: String },

    #[error("metric evaluation failed: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Machine-readable tag used in `error=<tag>` log lines.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::RejectedRecord(_) => "rejected_record",
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::Format { .. } => "format",
            Error::IncompatibleTensor { .. } => "incompatible_tensor",
            Error::Metric(_) => "metric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
