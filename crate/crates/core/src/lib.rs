//! Fine-grained product classification for retail leaflet images.
//!
//! An OCR ensemble turns each image into a text document, a TF-IDF
//! representation feeds a one-vs-rest linear classifier, an image model (or
//! externally produced scores) covers appearance, and the two score vectors
//! are fused by a weighted average. Low-confidence predictions go to a
//! human review queue.

pub mod corpus;
pub mod eval;
pub mod fusion;
pub mod image_model;
pub mod ocr;
pub mod pipeline;
pub mod review;
pub mod synth;
pub mod text;

pub use corpus::{load_manifest, validate_corpus, CorpusError, CorpusManifest, ImageRecord, Split, ValidationReport};
pub use eval::{evaluate, EvalError, EvaluationReport};
pub use fusion::{fuse, softmax, Confidence, FusionError, PredictionRecord};
pub use image_model::{ExternalScores, ImageModel, ImageModelError};
pub use ocr::{ExtractedDocument, OcrEngine, OcrError};
pub use review::{QueueError, QueueStore};
pub use text::{TextModel, TextModelError};
