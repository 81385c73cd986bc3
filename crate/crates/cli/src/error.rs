use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Input { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] gconv_core::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// 2 for bad configuration or inputs, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) | LabError::Input { .. } => 2,
            LabError::Core(gconv_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }
}
