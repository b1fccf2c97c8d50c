use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tlroa_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("boundary {path} was computed for a different post-fault regime (sidecar hash {found}, config gives {expected})")]
    RegimeMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn is_input_error(&self) -> bool {
        match self {
            CliError::Core(e) => e.is_input_error(),
            CliError::Io { .. }
            | CliError::Json { .. }
            | CliError::RegimeMismatch { .. }
            | CliError::Usage(_) => true,
        }
    }

    /// Process exit code: 1 for failed computations, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        if self.is_input_error() {
            2
        } else {
            1
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
