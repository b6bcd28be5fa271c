use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid asset spec: {0}")]
    InvalidAsset(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("mesh has zero extent")]
    ZeroExtent,

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: face references vertex {index} but only {count} vertices are defined")]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        index: i64,
        count: usize,
    },

    #[error("no foreground pixels in any view")]
    NoForeground,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("unsupported view count {0}; expected 1, 4 or 8")]
    UnsupportedViewCount(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
