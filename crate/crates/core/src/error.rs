use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the authentication pipeline.
///
/// Each variant maps to a stable [`PlaError::code`] so that the CLI and
/// persisted logs can be matched without parsing messages.
#[derive(Debug, Error)]
pub enum PlaError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid argument `{name}`: {reason}")]
    Argument { name: String, reason: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed container {}: {reason}", .path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{role} index {index} out of range (available: {available})")]
    IndexOutOfRange {
        role: String,
        index: usize,
        available: usize,
    },

    #[error("training fault: {0}")]
    Training(String),

    #[error("missing checkpoint for scheme `{0}` and training is disabled")]
    MissingCheckpoint(String),

    #[error("tensor backend: {0}")]
    Backend(#[from] candle_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl PlaError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn argument(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Argument {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Self::Shape {
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// Stable machine-readable code for the error category.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config { .. } => "E_CONFIG",
            Self::Argument { .. } => "E_ARGUMENT",
            Self::State(_) => "E_STATE",
            Self::Data(_) => "E_DATA",
            Self::Shape { .. } => "E_SHAPE",
            Self::MissingFile(_) => "E_MISSING_FILE",
            Self::Format { .. } => "E_FORMAT",
            Self::IndexOutOfRange { .. } => "E_INDEX_RANGE",
            Self::Training(_) => "E_TRAINING",
            Self::MissingCheckpoint(_) => "E_MISSING_CHECKPOINT",
            Self::Backend(_) => "E_BACKEND",
            Self::Io(_) => "E_IO",
            Self::Serde(_) => "E_SERDE",
        }
    }
}

impl From<serde_json::Error> for PlaError {
    fn from(e: serde_json::Error) -> Self {
        Self::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for PlaError {
    fn from(e: toml::de::Error) -> Self {
        Self::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PlaError>;
