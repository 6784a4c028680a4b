use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs `{missing}` to run first (expected {path})")]
    Dependency {
        stage: &'static str,
        missing: &'static str,
        path: PathBuf,
    },
    #[error(transparent)]
    Core(#[from] dmac_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed artifact: {detail}")]
    Artifact { path: PathBuf, detail: String },
}

impl LabError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Dependency { .. } => 3,
            LabError::Core(_) => 4,
            LabError::Io { .. } | LabError::Artifact { .. } => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
