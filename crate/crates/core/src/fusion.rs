//! Late fusion of the two branches.
//!
//! Each branch's scores go through a softmax, the text vector is weighted and
//! added to the image vector, and the sum is renormalized. A prediction is
//! high-confidence when both branches put their maximum on the same class;
//! everything else is a candidate for manual review.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEXT_WEIGHT: f64 = 2.0;
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("score vector contains a non-finite value")]
    NonFinite,
    #[error("score vector is empty")]
    Empty,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("text weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("k = {k} out of range 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub class_id: usize,
    pub probability: f64,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>, FusionError> {
    if scores.is_empty() {
        return Err(FusionError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FusionError::NonFinite);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `(p_image + w * p_text) / (1 + w)`.
pub fn fuse(p_image: &[f64], p_text: &[f64], w_text: f64) -> Result<Vec<f64>, FusionError> {
    if p_image.len() != p_text.len() {
        return Err(FusionError::LengthMismatch(p_image.len(), p_text.len()));
    }
    if !(w_text > 0.0 && w_text.is_finite()) {
        return Err(FusionError::InvalidWeight(w_text));
    }
    let denom = 1.0 + w_text;
    Ok(p_image
        .iter()
        .zip(p_text)
        .map(|(a, b)| (a + w_text * b) / denom)
        .collect())
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn label_confidence(p_image: &[f64], p_text: &[f64]) -> Result<Confidence, FusionError> {
    if p_image.len() != p_text.len() {
        return Err(FusionError::LengthMismatch(p_image.len(), p_text.len()));
    }
    Ok(if argmax(p_image) == argmax(p_text) {
        Confidence::High
    } else {
        Confidence::Low
    })
}

/// The `k` most probable classes, ties broken by ascending class id.
pub fn top_k(p: &[f64], k: usize) -> Result<Vec<Candidate>, FusionError> {
    if k == 0 || k > p.len() {
        return Err(FusionError::KOutOfRange { k, len: p.len() });
    }
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    Ok(idx
        .into_iter()
        .take(k)
        .map(|class_id| Candidate {
            class_id,
            probability: p[class_id],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_image: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_text: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_combined: Option<Vec<f64>>,
    pub predicted_class: usize,
    pub confidence: Confidence,
    pub top_k: Vec<Candidate>,
    pub text_weight: f64,
    /// Argmax of each branch on its own.
    pub image_class: usize,
    pub text_class: usize,
    /// Each branch's own ranking, same depth as `top_k`.
    pub image_top_k: Vec<Candidate>,
    pub text_top_k: Vec<Candidate>,
}

impl PredictionRecord {
    /// Softmaxes both branches' raw scores, fuses, and ranks.
    pub fn from_branch_scores(
        image_id: &str,
        image_raw: &[f64],
        text_raw: &[f64],
        w_text: f64,
        k: usize,
    ) -> Result<Self, FusionError> {
        let p_image = softmax(image_raw)?;
        let p_text = softmax(text_raw)?;
        let p_combined = fuse(&p_image, &p_text, w_text)?;
        Self::from_probabilities(image_id, p_image, p_text, p_combined, w_text, k)
    }

    fn from_probabilities(
        image_id: &str,
        p_image: Vec<f64>,
        p_text: Vec<f64>,
        p_combined: Vec<f64>,
        w_text: f64,
        k: usize,
    ) -> Result<Self, FusionError> {
        let ranked = top_k(&p_combined, k)?;
        Ok(PredictionRecord {
            image_id: image_id.to_string(),
            predicted_class: ranked[0].class_id,
            confidence: label_confidence(&p_image, &p_text)?,
            top_k: ranked,
            text_weight: w_text,
            image_class: argmax(&p_image),
            text_class: argmax(&p_text),
            image_top_k: top_k(&p_image, k)?,
            text_top_k: top_k(&p_text, k)?,
            p_image: Some(p_image),
            p_text: Some(p_text),
            p_combined: Some(p_combined),
        })
    }

    /// Re-fuses stored branch probabilities under another weight.
    pub fn refuse(&self, w_text: f64, k: usize) -> Result<Self, FusionError> {
        let (Some(p_image), Some(p_text)) = (&self.p_image, &self.p_text) else {
            return Err(FusionError::Empty);
        };
        let p_combined = fuse(p_image, p_text, w_text)?;
        Self::from_probabilities(&self.image_id, p_image.clone(), p_text.clone(), p_combined, w_text, k)
    }

    pub fn without_probabilities(mut self) -> Self {
        self.p_image = None;
        self.p_text = None;
        self.p_combined = None;
        self
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), FusionError> {
    let io_err = |source| FusionError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, FusionError> {
    let file = File::open(path).map_err(|source| FusionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let parse_err = |message: String| FusionError::Parse { line: idx + 1, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        for c in [-1e6, 0.0, 3.5, 1e6] {
            let p = softmax(&[c, c, c]).unwrap();
            for v in p {
                assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        let s = [0.3, -1.2, 4.0];
        let shifted: Vec<f64> = s.iter().map(|v| v + 17.0).collect();
        for (a, b) in softmax(&s).unwrap().iter().zip(softmax(&shifted).unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(FusionError::NonFinite)));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(FusionError::NonFinite)));
    }

    #[test]
    fn fuse_examples() {
        let p = [0.2, 0.5, 0.3];
        for w in [0.1, 1.0, 7.0] {
            for (a, b) in fuse(&p, &p, w).unwrap().iter().zip(p) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
            }
        }
        assert_eq!(fuse(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let f = fuse(&[0.6, 0.4], &[0.2, 0.8], 3.0).unwrap();
        assert_abs_diff_eq!(f[0], (0.6 + 0.6) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], (0.4 + 2.4) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[0], 0.3, epsilon = 1e-15);
        assert!(matches!(fuse(&[1.0], &[0.5, 0.5], 1.0), Err(FusionError::LengthMismatch(1, 2))));
        assert!(matches!(fuse(&[1.0], &[1.0], 0.0), Err(FusionError::InvalidWeight(_))));
        assert!(matches!(fuse(&[1.0], &[1.0], -2.0), Err(FusionError::InvalidWeight(_))));
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(label_confidence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), Confidence::High);
        assert_eq!(label_confidence(&[0.9, 0.1], &[0.1, 0.9]).unwrap(), Confidence::Low);
        assert_eq!(label_confidence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), Confidence::High);
        assert!(label_confidence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn top_k_examples() {
        let p = [0.1, 0.7, 0.2];
        let full = top_k(&p, 3).unwrap();
        let mut ids: Vec<usize> = full.iter().map(|c| c.class_id).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(
            top_k(&p, 2).unwrap(),
            vec![
                Candidate { class_id: 1, probability: 0.7 },
                Candidate { class_id: 2, probability: 0.2 }
            ]
        );
        assert_eq!(top_k(&[0.5, 0.5], 1).unwrap(), vec![Candidate { class_id: 0, probability: 0.5 }]);
        assert!(top_k(&p, 0).is_err());
        assert!(top_k(&p, 4).is_err());
    }

    #[test]
    fn record_from_scores() {
        let r = PredictionRecord::from_branch_scores("x", &[3.0, 0.0, 0.0], &[0.1, 0.8, 0.1], 2.0, 3).unwrap();
        assert_eq!(r.image_class, 0);
        assert_eq!(r.text_class, 1);
        assert_eq!(r.confidence, Confidence::Low);
        assert_eq!(r.predicted_class, argmax(r.p_combined.as_ref().unwrap()));
        assert_eq!(r.top_k[0].class_id, r.predicted_class);
        let again = r.refuse(2.0, 3).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn predictions_round_trip() {
        let records: Vec<PredictionRecord> = (0..20)
            .map(|i| {
                let a: Vec<f64> = (0..6).map(|k| ((i * 7 + k * 3) % 11) as f64 / 3.7).collect();
                let b: Vec<f64> = (0..6).map(|k| ((i * 5 + k) % 6) as f64 / 9.1).collect();
                PredictionRecord::from_branch_scores(&format!("img-{i}"), &a, &b, 1.7, 5).unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.jsonl");
        write_predictions(&p, &records).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), records);

        let slim: Vec<_> = records.iter().cloned().map(PredictionRecord::without_probabilities).collect();
        write_predictions(&p, &slim).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains("p_combined"));
        assert_eq!(read_predictions(&p).unwrap(), slim);
    }
}
