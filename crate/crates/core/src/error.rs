use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient tissue: {found} tissue pixels, at least {required} required")]
    InsufficientTissue { found: usize, required: usize },

    #[error("degenerate color: tissue optical density cloud has rank < 2 (singular values {s1:e}, {s2:e})")]
    DegenerateColor { s1: f64, s2: f64 },

    #[error("stain column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("maximum concentration for stain {0} must be positive")]
    ZeroMaxConcentration(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} predictions vs {right} ground-truth labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("label {0:?} is neither mapped nor dropped")]
    UnmappedLabel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for failures caused by the image content rather than I/O or
    /// malformed input (too little tissue, single-colour tissue).
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::InsufficientTissue { .. } | Error::DegenerateColor { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
