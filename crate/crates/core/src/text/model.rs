use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_one_vs_rest, SparseVector, TextHyperparams, TextModelError, TfidfVocabulary};

pub const TEXT_MODEL_FORMAT: &str = "leaflet-text-model";
const TEXT_MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextModel {
    pub vocabulary: TfidfVocabulary,
    /// Row-major `[classes.len() x vocabulary.len()]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Class id of each weight row.
    pub classes: Vec<usize>,
    pub hyperparams: TextHyperparams,
}

#[derive(Serialize, Deserialize)]
struct TextModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: TextModel,
}

/// Maps raw margins to probabilities: clamp((f + 1) / 2, 0, 1) per class,
/// then normalize. All-zero input falls back to uniform.
pub fn calibrate_margins(margins: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = margins.iter().map(|f| ((f + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.iter().map(|p| p / total).collect()
    } else {
        vec![1.0 / margins.len() as f64; margins.len()]
    }
}

pub fn train_text_model(
    vocabulary: TfidfVocabulary,
    x: &[SparseVector],
    y: &[usize],
    classes: &[usize],
    hp: TextHyperparams,
) -> Result<TextModel, TextModelError> {
    let n_features = vocabulary.len();
    let fits = train_one_vs_rest(x, y, classes, n_features, &hp)?;
    let mut weights = Vec::with_capacity(classes.len() * n_features);
    let mut bias = Vec::with_capacity(classes.len());
    for fit in fits {
        weights.extend_from_slice(&fit.weights);
        bias.push(fit.bias);
    }
    Ok(TextModel {
        vocabulary,
        weights,
        bias,
        classes: classes.to_vec(),
        hyperparams: hp,
    })
}

impl TextModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    fn row(&self, k: usize) -> &[f64] {
        let d = self.n_features();
        &self.weights[k * d..(k + 1) * d]
    }

    pub fn decision_function(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.n_classes())
            .map(|k| x.dot(self.row(k)) + self.bias[k])
            .collect()
    }

    pub fn predict_vector(&self, x: &SparseVector) -> Vec<f64> {
        calibrate_margins(&self.decision_function(x))
    }

    pub fn predict_scores(&self, doc: &str) -> Vec<f64> {
        self.predict_vector(&self.vocabulary.vectorize(doc))
    }

    /// Index into `classes` of the largest margin, lowest index on ties.
    pub fn predict_class(&self, doc: &str) -> usize {
        let margins = self.decision_function(&self.vocabulary.vectorize(doc));
        let mut best = 0;
        for (k, &m) in margins.iter().enumerate() {
            if m > margins[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    fn check(&self) -> Result<(), String> {
        let d = self.n_features();
        if self.vocabulary.token_to_index.len() != d {
            return Err("token table and idf array differ in length".into());
        }
        if self.weights.len() != self.n_classes() * d {
            return Err(format!(
                "weight matrix has {} entries, expected {} x {}",
                self.weights.len(),
                self.n_classes(),
                d
            ));
        }
        if self.bias.len() != self.n_classes() {
            return Err("bias length differs from class count".into());
        }
        if self.weights.iter().chain(&self.bias).chain(&self.vocabulary.idf).any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TextModelError> {
        let file = TextModelFile {
            format: TEXT_MODEL_FORMAT.into(),
            version: TEXT_MODEL_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string(&file).expect("model serializes");
        std::fs::write(path, json).map_err(|source| TextModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TextModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| TextModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let format_err = |message: String| TextModelError::Format {
            path: path.to_path_buf(),
            message,
        };
        let file: TextModelFile = serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if file.format != TEXT_MODEL_FORMAT {
            return Err(format_err(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != TEXT_MODEL_VERSION {
            return Err(format_err(format!(
                "format version {} (supported: {TEXT_MODEL_VERSION})",
                file.version
            )));
        }
        file.model.check().map_err(format_err)?;
        Ok(file.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::fit_vectorizer;
    use approx::assert_abs_diff_eq;

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_margins(&[1.0, -1.0]), vec![1.0, 0.0]);
        assert_eq!(calibrate_margins(&[-1.0, -1.0]), vec![0.5, 0.5]);
        let p = calibrate_margins(&[0.0, -0.5]);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    fn two_doc_model(seed: u64) -> TextModel {
        let docs = ["alpha bravo", "charlie delta"];
        let vocab = fit_vectorizer(&docs).unwrap();
        let x: Vec<_> = docs.iter().map(|d| vocab.vectorize(d)).collect();
        let hp = TextHyperparams {
            seed,
            ..TextHyperparams::default()
        };
        train_text_model(vocab, &x, &[0, 1], &[0, 1], hp).unwrap()
    }

    #[test]
    fn separable_pair_is_learned() {
        // alpha/bravo and charlie/delta occupy disjoint coordinates, so
        // w = e_alpha + e_bravo - e_charlie - e_delta separates them
        let m = two_doc_model(11);
        assert_eq!(m.predict_class("alpha bravo"), 0);
        assert_eq!(m.predict_class("charlie delta"), 1);
        let p = m.predict_scores("alpha bravo");
        assert!(p[0] > p[1]);
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(two_doc_model(5), two_doc_model(5));
    }

    #[test]
    fn empty_doc_uses_biases() {
        let m = two_doc_model(1);
        let p = m.predict_scores("");
        assert_eq!(p, calibrate_margins(&m.bias));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let m = two_doc_model(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.json");
        m.save(&path).unwrap();
        let back = TextModel::load(&path).unwrap();
        assert_eq!(back, m);
        for doc in ["alpha", "delta bravo", "unknown words", ""] {
            let a: Vec<u64> = m.predict_scores(doc).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.predict_scores(doc).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn load_rejects_other_versions() {
        let m = two_doc_model(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.json");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, text).unwrap();
        let err = TextModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("format version 9"), "{err}");
    }
}
