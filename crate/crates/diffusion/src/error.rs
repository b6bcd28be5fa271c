use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestep {t} outside 0..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss {loss} at step {step} (last finite loss {last_finite:?}, timestep {t})")]
    NonFinite { step: u64, loss: f64, last_finite: Option<f64>, t: usize },
    #[error("bad checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] unpic_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
