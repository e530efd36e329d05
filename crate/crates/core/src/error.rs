use std::path::PathBuf;

use thiserror::Error;
use voxatt_tensor::TensorError;

#[derive(Debug, Error)]
pub enum VoxError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("checkpoint parameter `{param}`: {msg}")]
    Checkpoint { param: String, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = VoxError> = std::result::Result<T, E>;

impl VoxError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VoxError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        VoxError::Format {
            offset,
            msg: msg.into(),
        }
    }
}
