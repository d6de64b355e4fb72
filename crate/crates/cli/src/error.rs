use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Module(#[from] physnet::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// Library errors keep their own identifier.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Module(e) => e.kind(),
            CliError::Config(_) => "Config",
            CliError::Io { .. } => "Io",
        }
    }

    pub fn record(&self, command: &str) -> ErrorRecord {
        ErrorRecord { command: command.to_string(), kind: self.kind().to_string(), message: self.to_string() }
    }
}

/// What a failed run leaves behind, on stderr and as `error.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: String,
    pub message: String,
}
