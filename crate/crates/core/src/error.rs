use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sentence {sentence}, position {position}: {message}")]
    InvalidBio {
        sentence: usize,
        position: usize,
        message: String,
    },

    #[error("invalid tag {0:?}")]
    InvalidTag(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown sentence id {0}")]
    UnknownSentence(usize),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("session closed")]
    SessionClosed,

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
