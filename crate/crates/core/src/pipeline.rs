//! End-to-end glue: documents from the extraction cache, branch training on
//! manifest records, and fused prediction.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{open_image, resize_longest_edge, CorpusError, CorpusManifest, ImageRecord, CLASSIFICATION_EDGE};
use crate::eval::EvalError;
use crate::fusion::{FusionError, PredictionRecord};
use crate::image_model::{predict_image_scores, ExternalScores, ImageHyperparams, ImageModel, ImageModelError};
use crate::ocr::{ExtractionCache, OcrError};
use crate::text::{fit_vectorizer, train_text_model, TextHyperparams, TextModel, TextModelError};

/// Candidate text weights for the held-out sweep.
pub const SWEEP_GRID: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Ocr(#[from] OcrError),
    #[error(transparent)]
    Text(#[from] TextModelError),
    #[error(transparent)]
    Image(#[from] ImageModelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no extracted document for {0}; run extract-text first")]
    MissingDocument(String),
    #[error("no scores for {0} in the external scores file")]
    MissingScores(String),
    #[error("model has {found} classes but the manifest has {expected}")]
    ClassCount { expected: usize, found: usize },
    #[error("no records selected")]
    NoRecords,
}

/// Documents for `records`, keyed by image id. Every record must be present
/// in the cache.
pub fn load_documents(cache_path: &Path, records: &[&ImageRecord]) -> Result<HashMap<String, String>, PipelineError> {
    let cache = ExtractionCache::open_read_only(cache_path)?;
    records
        .iter()
        .map(|r| {
            cache
                .get(&r.image_id)
                .map(|d| (r.image_id.clone(), d.document))
                .ok_or_else(|| PipelineError::MissingDocument(r.image_id.clone()))
        })
        .collect()
}

pub fn class_ids(manifest: &CorpusManifest) -> Vec<usize> {
    (0..manifest.classes.len()).collect()
}

fn document<'a>(docs: &'a HashMap<String, String>, r: &ImageRecord) -> Result<&'a str, PipelineError> {
    docs.get(&r.image_id)
        .map(String::as_str)
        .ok_or_else(|| PipelineError::MissingDocument(r.image_id.clone()))
}

/// Fits the vocabulary and the one-vs-rest model on the given records.
pub fn fit_text(
    manifest: &CorpusManifest,
    records: &[&ImageRecord],
    docs: &HashMap<String, String>,
    hp: TextHyperparams,
) -> Result<TextModel, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::NoRecords);
    }
    let texts = records.iter().map(|r| document(docs, r)).collect::<Result<Vec<_>, _>>()?;
    let vocabulary = fit_vectorizer(&texts)?;
    let x: Vec<_> = texts.iter().map(|t| vocabulary.vectorize(t)).collect();
    let y: Vec<usize> = records.iter().map(|r| r.class_id).collect();
    Ok(train_text_model(vocabulary, &x, &y, &class_ids(manifest), hp)?)
}

/// Decodes a record's image and scales its longer edge to the
/// classification size.
pub fn classification_image(manifest: &CorpusManifest, record: &ImageRecord) -> Result<RgbImage, PipelineError> {
    let img = open_image(&manifest.image_path(record))?;
    Ok(resize_longest_edge(&img, CLASSIFICATION_EDGE)?.to_rgb8())
}

pub fn fit_image(manifest: &CorpusManifest, records: &[&ImageRecord], hp: ImageHyperparams) -> Result<ImageModel, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::NoRecords);
    }
    let images = records
        .par_iter()
        .map(|r| classification_image(manifest, r))
        .collect::<Result<Vec<_>, _>>()?;
    let y: Vec<usize> = records.iter().map(|r| r.class_id).collect();
    Ok(crate::image_model::train_image_model_from_images(&images, &y, &class_ids(manifest), hp)?)
}

/// Source of the image branch's raw scores.
#[derive(Debug, Clone, Copy)]
pub enum ImageScorer<'a> {
    /// Probabilities of the built-in model. Fusion softmaxes them again, the
    /// same treatment the text branch's calibrated probabilities get.
    Model(&'a ImageModel),
    /// Scores produced elsewhere, used as given.
    External(&'a ExternalScores),
}

impl ImageScorer<'_> {
    pub fn n_classes(&self) -> usize {
        match self {
            ImageScorer::Model(m) => m.n_classes(),
            ImageScorer::External(e) => e.classes.len(),
        }
    }

    pub fn raw_scores(&self, manifest: &CorpusManifest, record: &ImageRecord) -> Result<Vec<f64>, PipelineError> {
        match self {
            ImageScorer::Model(m) => Ok(predict_image_scores(m, &classification_image(manifest, record)?.into())?),
            ImageScorer::External(e) => e
                .get(&record.image_id)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| PipelineError::MissingScores(record.image_id.clone())),
        }
    }
}

/// Fused predictions for `records`, in record order.
pub fn predict(
    manifest: &CorpusManifest,
    records: &[&ImageRecord],
    docs: &HashMap<String, String>,
    text: &TextModel,
    image: ImageScorer<'_>,
    text_weight: f64,
    top_k: usize,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    let expected = manifest.classes.len();
    for found in [text.n_classes(), image.n_classes()] {
        if found != expected {
            return Err(PipelineError::ClassCount { expected, found });
        }
    }
    records
        .par_iter()
        .map(|r| {
            let text_raw = text.predict_scores(document(docs, r)?);
            let image_raw = image.raw_scores(manifest, r)?;
            Ok(PredictionRecord::from_branch_scores(&r.image_id, &image_raw, &text_raw, text_weight, top_k)?)
        })
        .collect()
}

/// Splits records into (fit, held-out) per class. Each class with at least
/// two records keeps one on both sides.
pub fn stratified_holdout<'a>(records: &[&'a ImageRecord], fraction: f64, seed: u64) -> (Vec<&'a ImageRecord>, Vec<&'a ImageRecord>) {
    let mut by_class: HashMap<usize, Vec<&ImageRecord>> = HashMap::new();
    for r in records {
        by_class.entry(r.class_id).or_default().push(r);
    }
    let mut classes: Vec<usize> = by_class.keys().copied().collect();
    classes.sort_unstable();
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    for c in classes {
        let mut members = by_class.remove(&c).unwrap_or_default();
        members.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let n = members.len();
        let k = if n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
        held.extend_from_slice(&members[..k]);
        fit.extend_from_slice(&members[k..]);
    }
    (fit, held)
}
