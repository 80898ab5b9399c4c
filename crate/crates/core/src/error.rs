use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StganError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StganError {
    #[error("window index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("causal duration tau must be at least 2, got {0}")]
    TauTooSmall(usize),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("no frame files found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("frames in {0} have mixed dimensions")]
    MixedDimensions(PathBuf),
    #[error("unsupported bit depth in {0}")]
    UnsupportedBitDepth(PathBuf),
    #[error("frame indices are not contiguous: missing index {missing}")]
    NonContiguousIndices { missing: i64 },
    #[error("time shift {shift} too large for sequences of length {len}")]
    ShiftTooLarge { shift: i64, len: usize },
    #[error("crop {crop} larger than frame {height}x{width}")]
    CropTooLarge { crop: usize, height: usize, width: usize },
    #[error("insufficient area: {0}")]
    InsufficientArea(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("synthetic lag {lag} too large for sequence length {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("oracle configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),
    #[error("temporal generator expects {expected} frames, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("input {height}x{width} smaller than the discriminator minimum {min}x{min}")]
    InputTooSmall { height: usize, width: usize, min: usize },

    #[error("non-finite loss in component `{0}`")]
    NanLoss(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("direction mismatch: {0}")]
    DirectionMismatch(String),
    #[error("sequence of length {len} too short for tau {tau}")]
    SequenceTooShort { len: usize, tau: usize },

    #[error("frame size too small for SSIM: {height}x{width}")]
    FrameTooSmall { height: usize, width: usize },
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl StganError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        StganError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        StganError::Shape(message.into())
    }
}
