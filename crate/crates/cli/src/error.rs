use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("serialization failed: {0}")]
    Serialize(String),

    #[error("no scenario file or bundled scenario named {0:?}")]
    NotFound(String),
}

impl CliError {
    /// Configuration problems exit with 2, I/O failures during a run with 3.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 3,
            _ => 2,
        }
    }
}
