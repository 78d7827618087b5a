use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the ISP library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("image dimensions {height}x{width} must both be even (crop one row/column to align with the 2x2 CFA)")]
    OddDimensions { height: usize, width: usize },

    #[error("invalid mosaic pattern `{0}`: expected one of RGGB, BGGR, GRBG, GBRG")]
    Pattern(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("degenerate dictionary atom {atom}: column {column} is zero after clamping")]
    DegenerateAtom { atom: usize, column: usize },

    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("loss node is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("parameter `{0}` is not reachable from the loss")]
    Detached(String),

    #[error("non-finite gradient for `{name}` at step {step}: {detail}")]
    NonFiniteGradient { name: String, step: u64, detail: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest {path}: {problems:?}")]
    Manifest { path: PathBuf, problems: Vec<String> },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
