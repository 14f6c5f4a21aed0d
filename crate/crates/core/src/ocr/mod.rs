//! OCR extraction ensemble.
//!
//! Each product image is read by eight extraction methods: four page
//! segmentation modes on the raw image and four grayscale variants (with
//! optional 4x upscaling and Otsu binarization). The method outputs are kept
//! in method order and concatenated into one document, duplicates included.
//! Results are persisted in an append-only cache keyed by image id, engine
//! version, and method set.

mod cache;
mod engine;
mod extract;
mod methods;
mod preprocess;

pub use cache::{CacheVersions, ExtractionCache};
pub use engine::{ocr_extract, normalize_ocr_text, OcrEngine, TesseractEngine, DEFAULT_LANGUAGES, DEFAULT_TIMEOUT, VALID_PSMS};
pub use extract::{compose_document, extract_corpus, extract_document, ExtractedDocument};
pub use methods::{canonical_methods, methods_version, ExtractionMethodSpec};
pub use preprocess::{luma_bt601, otsu_binarize, otsu_threshold, preprocess, upscale};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("OCR engine {binary:?} not found: {message}. Install tesseract (e.g. `apt install tesseract-ocr tesseract-ocr-deu`) or pass --engine <path>")]
    EngineNotFound { binary: PathBuf, message: String },
    #[error("unsupported page segmentation mode {0} (expected one of 3, 6, 11, 12)")]
    InvalidPsm(u8),
    #[error("OCR engine exited with {status}: {stderr}")]
    EngineFailed { status: String, stderr: String },
    #[error("OCR engine timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("image has a zero dimension")]
    EmptyImage,
    #[error("unknown extraction method id {0}")]
    UnknownMethod(u8),
    #[error("cannot read image {path}: {message}")]
    UnreadableImage { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {path} line {line}: {message}")]
    CorruptCache {
        path: PathBuf,
        line: usize,
        message: String,
    },
}
