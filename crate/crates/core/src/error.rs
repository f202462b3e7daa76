use std::path::PathBuf;

use thiserror::Error;

/// A malformed workload script, policy file, or raw call description.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{source_name}:{line}: {message}")]
pub struct ScenarioError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

impl ScenarioError {
    pub fn new(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Self {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// Error for a call description that did not come from a file.
    pub fn call(message: impl Into<String>) -> Self {
        Self::new("<call>", 0, message)
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("channel closed")]
    Closed,
    #[error("run stopped")]
    Stopped,
    #[error("malformed frame: {0}")]
    Decode(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MvxError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
}

impl MvxError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MvxError::Io {
            path: path.into(),
            source,
        }
    }
}
