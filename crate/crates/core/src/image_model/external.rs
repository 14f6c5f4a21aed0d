//! Per-image class scores produced outside this crate, e.g. by a fine-tuned
//! ResNet50 with a 2048-1024-ReLU-1024-n_classes head (batch 16, SGD
//! momentum 0.95, saturation jitter 0.5). Rows hold raw logits; fusion
//! applies its own softmax.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImageModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScores {
    pub source: String,
    pub classes: Vec<String>,
    pub scores: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ScoresLine {
    Header {
        classes: Vec<String>,
        #[serde(default)]
        source: String,
    },
    Scores {
        image_id: String,
        scores: Vec<f64>,
    },
}

impl ExternalScores {
    pub fn get(&self, image_id: &str) -> Option<&[f64]> {
        self.scores.get(image_id).map(Vec::as_slice)
    }

    pub fn write(&self, path: &Path) -> Result<(), ImageModelError> {
        let io_err = |source| ImageModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let header = ScoresLine::Header {
            classes: self.classes.clone(),
            source: self.source.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("serializes")).map_err(io_err)?;
        let mut ids: Vec<&String> = self.scores.keys().collect();
        ids.sort();
        for id in ids {
            let row = ScoresLine::Scores {
                image_id: id.clone(),
                scores: self.scores[id].clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&row).expect("serializes")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Loads a scores file whose class table must equal `expected_classes`
/// exactly, names and order.
pub fn load_external_scores(path: &Path, expected_classes: &[String]) -> Result<ExternalScores, ImageModelError> {
    let file = File::open(path).map_err(|source| ImageModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut header: Option<(Vec<String>, String)> = None;
    let mut scores: HashMap<String, Vec<f64>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let parse_err = |message: String| ImageModelError::Parse { line: line_no, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScoresLine>(&line).map_err(|e| parse_err(e.to_string()))? {
            ScoresLine::Header { classes, source } => {
                if header.is_some() {
                    return Err(parse_err("duplicate header".into()));
                }
                check_class_table(expected_classes, &classes)?;
                header = Some((classes, source));
            }
            ScoresLine::Scores { image_id, scores: row } => {
                let Some((classes, _)) = &header else {
                    return Err(parse_err("scores row before header".into()));
                };
                if row.len() != classes.len() {
                    return Err(ImageModelError::ScoreLength {
                        image_id,
                        expected: classes.len(),
                        found: row.len(),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(ImageModelError::NonFiniteScore { image_id });
                }
                if scores.contains_key(&image_id) {
                    return Err(ImageModelError::DuplicateImageId { image_id });
                }
                scores.insert(image_id, row);
            }
        }
    }
    let (classes, source) = header.ok_or(ImageModelError::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    Ok(ExternalScores { source, classes, scores })
}

fn check_class_table(expected: &[String], found: &[String]) -> Result<(), ImageModelError> {
    let divergent = expected
        .iter()
        .zip(found)
        .position(|(a, b)| a != b)
        .or_else(|| (expected.len() != found.len()).then(|| expected.len().min(found.len())));
    match divergent {
        None => Ok(()),
        Some(index) => Err(ImageModelError::ClassTableMismatch {
            index,
            expected: expected.get(index).cloned().unwrap_or_else(|| "<end>".into()),
            found: found.get(index).cloned().unwrap_or_else(|| "<end>".into()),
        }),
    }
}
