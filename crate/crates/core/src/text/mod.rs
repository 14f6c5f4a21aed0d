//! Text branch: TF-IDF encoding of extracted documents and a one-vs-rest
//! linear classifier trained with the modified Huber loss.

mod model;
mod sgd;
mod tfidf;

pub use model::{calibrate_margins, train_text_model, TextModel, TEXT_MODEL_FORMAT};
pub use sgd::{fit_binary, modified_huber, train_one_vs_rest, BinaryFit, EpochTrace, TextHyperparams, ETA_DIVISOR, MIN_ETA};
pub use tfidf::{fit_vectorizer, smoothed_idf, tokenize, vectorize, SparseVector, TfidfVocabulary};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextModelError {
    #[error("no documents to fit")]
    NoDocuments,
    #[error("empty vocabulary: no document contains a token of two or more alphanumeric characters")]
    EmptyVocabulary,
    #[error("training data contains fewer than two distinct classes")]
    SingleClass,
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("label {0} is not in the model's class list")]
    UnknownClass(usize),
    #[error("feature index {index} out of range for {n_features} features")]
    FeatureIndexOutOfRange { index: usize, n_features: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid text model: {message}")]
    Format { path: PathBuf, message: String },
}

/// Predicts calibrated class probabilities for one document.
pub fn predict_text_scores(model: &TextModel, doc: &str) -> Vec<f64> {
    model.predict_scores(doc)
}
