use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol {0:?} is not in the stimulus alphabet")]
    UnknownSymbol(char),

    #[error("font resource {path:?} could not be loaded: {reason}")]
    Font { path: PathBuf, reason: String },

    #[error("placement out of canvas: {0}")]
    Placement(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("record file {path:?}, line {line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("worker failure after {completed} of {total} trials: {reason}")]
    Sweep {
        completed: usize,
        total: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
