use std::path::PathBuf;

use crate::types::BBox;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bounding box {bbox:?} is invalid for a {height}x{width} image")]
    InvalidBBox { bbox: BBox, height: usize, width: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("likelihood {0} is outside (0, 1]")]
    InvalidLikelihood(f64),

    #[error("zero pixel count")]
    ZeroPixels,

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("format error in {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("detector failed on image `{image_id}`: {reason}")]
    Detector { image_id: String, reason: String },

    #[error("no region cache for image `{0}`")]
    MissingCache(String),

    #[error("recognizer does not support gradients")]
    NoGradient,

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("synthetic layout: {0}")]
    Layout(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
