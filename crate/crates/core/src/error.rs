use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: dimensions must be nonempty and positive")]
    InvalidShape(Vec<usize>),

    #[error("data length {len} does not match shape product {expected}")]
    LengthMismatch { len: usize, expected: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("E8M0 overflow: {0} exceeds 2^127")]
    ScaleOverflow(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("undefined model: {0}")]
    UndefinedModel(String),

    #[error("bad magic: expected MOSSTNSR, found {0:02x?}")]
    BadMagic([u8; 8]),

    #[error("unsupported tensor file version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error("unknown dtype tag {0}")]
    UnknownDType(u8),

    #[error("truncated tensor file: {0}")]
    Truncated(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid_shape",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidValue(_) => "invalid_value",
            Error::ScaleOverflow(_) => "scale_overflow",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::UndefinedModel(_) => "undefined_model",
            Error::BadMagic(_) => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::UnknownDType(_) => "unknown_dtype",
            Error::Truncated(_) => "truncated",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
        }
    }
}
