use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation, matching and optimization stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid material: refractive index {0} must exceed 1")]
    InvalidMaterial(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("disparity range error: {0}")]
    Range(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("tape lifecycle error: {0}")]
    Lifecycle(String),

    #[error("differentiation contract violated: {0}")]
    Contract(String),

    #[error("gradient check invalid: {0}")]
    CheckInvalid(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("missing input {path}: {hint}")]
    Missing { path: PathBuf, hint: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
