use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the fusion / synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or grid description violates its contract.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    /// A caller asked for a pixel that is not inside the image.
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid blend parameters: {0}")]
    InvalidBlend(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// Averaging over an empty pixel set.
    #[error("evaluation mask is empty")]
    EmptyEvaluation,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Failure while reading or processing one frame of a sequence.
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
