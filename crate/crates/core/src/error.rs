use std::path::PathBuf;

use crate::segment::PartialTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid seed: {0}")]
    InvalidSeed(String),

    /// The zero level set vanished; `trace` holds whatever iterations completed.
    #[error("contour collapsed at iteration {iteration}")]
    ContourCollapse {
        iteration: usize,
        trace: Box<PartialTrace>,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported raster format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn collapse(iteration: usize) -> Self {
        Error::ContourCollapse {
            iteration,
            trace: Box::default(),
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::ContourCollapse { .. })
    }
}
