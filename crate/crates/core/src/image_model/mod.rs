//! Image branch.
//!
//! The native model is a linear softmax classifier over fixed thumbnail and
//! color-histogram features. It keeps the pipeline self-contained; scores
//! from a fine-tuned CNN can be substituted through [`ExternalScores`].

mod external;
mod features;
mod jitter;
mod model;

pub use external::{load_external_scores, ExternalScores};
pub use features::{image_features, rgb_features, ImageFeatureVector, FEATURE_LEN, HIST_BINS, THUMB_SIDE};
pub use jitter::{hsv_to_rgb, jitter_saturation, rgb_to_hsv, scale_saturation};
pub use model::{
    predict_image_scores, train_image_model, train_image_model_from_images, FeatureStats, ImageHyperparams, ImageModel,
    IMAGE_MODEL_FORMAT,
};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageModelError {
    #[error("image has a zero dimension")]
    EmptyImage,
    #[error("training data contains fewer than two distinct classes")]
    SingleClass,
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("label {0} is not in the model's class list")]
    UnknownClass(usize),
    #[error("feature vector has length {found}, expected {expected}")]
    FeatureLength { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid image model: {message}")]
    Format { path: PathBuf, message: String },
    #[error("scores file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("class table mismatch at index {index}: corpus has {expected:?}, scores file has {found:?}")]
    ClassTableMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("scores for {image_id}: expected {expected} values, found {found}")]
    ScoreLength {
        image_id: String,
        expected: usize,
        found: usize,
    },
    #[error("scores for {image_id} contain a non-finite value")]
    NonFiniteScore { image_id: String },
    #[error("duplicate scores row for {image_id}")]
    DuplicateImageId { image_id: String },
    #[error("no external scores for {0}")]
    MissingScores(String),
}
