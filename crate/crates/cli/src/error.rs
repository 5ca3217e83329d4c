use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("missing files in {dir}: {}", .files.join(", "))]
    Missing { dir: PathBuf, files: Vec<String> },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        RunError::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        RunError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        RunError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        RunError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}
