use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] difd_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        AppError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        AppError::Format { path: path.as_ref().to_path_buf(), message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        AppError::Core(difd_core::Error::Config(message.into()))
    }

    /// 2 configuration, 3 data or I/O, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(e) => e.exit_code(),
            AppError::Io { .. } | AppError::Format { .. } => 3,
        }
    }
}
