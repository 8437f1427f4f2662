//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// `Config` and `InvalidParameter` indicate a caller mistake (bad arguments);
/// everything else is a data or runtime failure. The CLI maps the former to
/// exit code 2 and the latter to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation received no data to work on.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// An item or user fell outside the active vocabulary or model.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// A numeric or structural argument was out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A change-point index was out of bounds or not strictly increasing.
    #[error("invalid change point: {0}")]
    InvalidChangePoint(String),

    /// A segment was empty or referenced items outside the matrix.
    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    /// An interaction file failed to parse; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A model file did not match the expected layout.
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// A run configuration named an unknown method, detector, or mode.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
