//! Accuracy, Top-k, per-confidence breakdown, union-of-branches ceiling and
//! confusion pairs over a prediction set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{Candidate, Confidence, FusionError, PredictionRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground truth for image {0}")]
    MissingTruth(String),
    #[error("branch prediction sets cover different images (first difference: {0})")]
    IdSetMismatch(String),
    #[error("no predictions to evaluate")]
    Empty,
    #[error("weight sweep needs branch probabilities; rerun predict without --no-probs ({0})")]
    MissingProbabilities(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub true_class: usize,
    pub predicted_class: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchMetrics {
    pub accuracy: f64,
    pub top3: Option<f64>,
    pub top5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub accuracy: f64,
    /// Absent when some ranking is too shallow to decide.
    pub top3: Option<f64>,
    pub top5: Option<f64>,
    pub accuracy_high_conf: Option<f64>,
    pub accuracy_low_conf: Option<f64>,
    pub n_high: usize,
    pub n_low: usize,
    pub oracle_union: f64,
    pub image: BranchMetrics,
    pub text: BranchMetrics,
    pub confusion_pairs: Vec<ConfusionPair>,
}

/// Whether `truth` is within the first `k` of a ranking. Full probability
/// vectors are authoritative; otherwise the stored candidate list is used,
/// which cannot rule out a hit beyond its depth.
fn hit_at(list: &[Candidate], probs: Option<&Vec<f64>>, truth: usize, k: usize) -> Option<bool> {
    if let Some(p) = probs {
        let Some(&pt) = p.get(truth) else {
            return Some(false);
        };
        let rank = p
            .iter()
            .enumerate()
            .filter(|&(i, &v)| v > pt || (v == pt && i < truth))
            .count();
        return Some(rank < k);
    }
    let depth = list.len().min(k);
    if list[..depth].iter().any(|c| c.class_id == truth) {
        Some(true)
    } else if list.len() >= k {
        Some(false)
    } else {
        None
    }
}

fn rate(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

fn top_k_rate<'a, I>(items: I, n: usize, k: usize) -> Option<f64>
where
    I: Iterator<Item = (&'a [Candidate], Option<&'a Vec<f64>>, usize)>,
{
    let mut hits = 0;
    for (list, probs, truth) in items {
        if hit_at(list, probs, truth, k)? {
            hits += 1;
        }
    }
    rate(hits, n)
}

fn lookup(truth: &HashMap<String, usize>, image_id: &str) -> Result<usize, EvalError> {
    truth
        .get(image_id)
        .copied()
        .ok_or_else(|| EvalError::MissingTruth(image_id.to_string()))
}

pub fn evaluate(preds: &[PredictionRecord], truth: &HashMap<String, usize>) -> Result<EvaluationReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let labels: Vec<usize> = preds
        .iter()
        .map(|p| lookup(truth, &p.image_id))
        .collect::<Result<_, _>>()?;
    let n = preds.len();
    let correct = |p: &PredictionRecord, t: usize| p.predicted_class == t;

    let hits = preds.iter().zip(&labels).filter(|(p, &t)| correct(p, t)).count();
    let (mut n_high, mut hits_high, mut n_low, mut hits_low) = (0, 0, 0, 0);
    for (p, &t) in preds.iter().zip(&labels) {
        match p.confidence {
            Confidence::High => {
                n_high += 1;
                hits_high += correct(p, t) as usize;
            }
            Confidence::Low => {
                n_low += 1;
                hits_low += correct(p, t) as usize;
            }
        }
    }

    let combined = |k| {
        top_k_rate(
            preds
                .iter()
                .zip(&labels)
                .map(|(p, &t)| (p.top_k.as_slice(), p.p_combined.as_ref(), t)),
            n,
            k,
        )
    };
    let image_rank = |k| {
        top_k_rate(
            preds
                .iter()
                .zip(&labels)
                .map(|(p, &t)| (p.image_top_k.as_slice(), p.p_image.as_ref(), t)),
            n,
            k,
        )
    };
    let text_rank = |k| {
        top_k_rate(
            preds
                .iter()
                .zip(&labels)
                .map(|(p, &t)| (p.text_top_k.as_slice(), p.p_text.as_ref(), t)),
            n,
            k,
        )
    };
    let image_hits = preds.iter().zip(&labels).filter(|(p, &t)| p.image_class == t).count();
    let text_hits = preds.iter().zip(&labels).filter(|(p, &t)| p.text_class == t).count();
    let union_hits = preds
        .iter()
        .zip(&labels)
        .filter(|(p, &t)| p.image_class == t || p.text_class == t)
        .count();

    Ok(EvaluationReport {
        n,
        accuracy: hits as f64 / n as f64,
        top3: combined(3),
        top5: combined(5),
        accuracy_high_conf: rate(hits_high, n_high),
        accuracy_low_conf: rate(hits_low, n_low),
        n_high,
        n_low,
        oracle_union: union_hits as f64 / n as f64,
        image: BranchMetrics {
            accuracy: image_hits as f64 / n as f64,
            top3: image_rank(3),
            top5: image_rank(5),
        },
        text: BranchMetrics {
            accuracy: text_hits as f64 / n as f64,
            top3: text_rank(3),
            top5: text_rank(5),
        },
        confusion_pairs: confusion_report(preds, truth, usize::MAX),
    })
}

/// Fraction of images where either branch's argmax is correct.
pub fn oracle_union(
    image_preds: &HashMap<String, usize>,
    text_preds: &HashMap<String, usize>,
    truth: &HashMap<String, usize>,
) -> Result<f64, EvalError> {
    if let Some(id) = image_preds.keys().find(|id| !text_preds.contains_key(*id)) {
        return Err(EvalError::IdSetMismatch(id.clone()));
    }
    if let Some(id) = text_preds.keys().find(|id| !image_preds.contains_key(*id)) {
        return Err(EvalError::IdSetMismatch(id.clone()));
    }
    if image_preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut hits = 0;
    for (id, &img) in image_preds {
        let t = lookup(truth, id)?;
        if img == t || text_preds[id] == t {
            hits += 1;
        }
    }
    Ok(hits as f64 / image_preds.len() as f64)
}

/// Misclassifications grouped by (true, predicted), most frequent first,
/// ties by class ids ascending. Predictions without truth are skipped.
pub fn confusion_report(preds: &[PredictionRecord], truth: &HashMap<String, usize>, limit: usize) -> Vec<ConfusionPair> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for p in preds {
        if let Some(&t) = truth.get(&p.image_id) {
            if t != p.predicted_class {
                *counts.entry((t, p.predicted_class)).or_default() += 1;
            }
        }
    }
    let mut pairs: Vec<ConfusionPair> = counts
        .into_iter()
        .map(|((true_class, predicted_class), count)| ConfusionPair {
            true_class,
            predicted_class,
            count,
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then((a.true_class, a.predicted_class).cmp(&(b.true_class, b.predicted_class)))
    });
    pairs.truncate(limit);
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScore {
    pub text_weight: f64,
    pub accuracy: f64,
}

/// Accuracy of the fused prediction under each weight. The selected weight
/// is the first one reaching the maximum.
pub fn sweep_weights(
    preds: &[PredictionRecord],
    truth: &HashMap<String, usize>,
    weights: &[f64],
) -> Result<(Vec<WeightScore>, f64), EvalError> {
    if preds.is_empty() || weights.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(p) = preds.iter().find(|p| p.p_image.is_none() || p.p_text.is_none()) {
        return Err(EvalError::MissingProbabilities(p.image_id.clone()));
    }
    let mut scores = Vec::with_capacity(weights.len());
    for &w in weights {
        let mut hits = 0;
        for p in preds {
            let t = lookup(truth, &p.image_id)?;
            if p.refuse(w, 1)?.predicted_class == t {
                hits += 1;
            }
        }
        scores.push(WeightScore {
            text_weight: w,
            accuracy: hits as f64 / preds.len() as f64,
        });
    }
    let best = scores
        .iter()
        .fold(&scores[0], |best, s| if s.accuracy > best.accuracy { s } else { best })
        .text_weight;
    Ok((scores, best))
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Aligned-column text rendering.
pub fn render_report(report: &EvaluationReport, classes: &[String], confusion_limit: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9}", "branch", "accuracy", "top3", "top5");
    let _ = writeln!(
        s,
        "{:<10} {:>9} {:>9} {:>9}",
        "image",
        pct(Some(report.image.accuracy)),
        pct(report.image.top3),
        pct(report.image.top5)
    );
    let _ = writeln!(
        s,
        "{:<10} {:>9} {:>9} {:>9}",
        "text",
        pct(Some(report.text.accuracy)),
        pct(report.text.top3),
        pct(report.text.top5)
    );
    let _ = writeln!(
        s,
        "{:<10} {:>9} {:>9} {:>9}",
        "combined",
        pct(Some(report.accuracy)),
        pct(report.top3),
        pct(report.top5)
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:>9}", "images", report.n);
    let _ = writeln!(s, "{:<24} {:>9}", "high confidence", report.n_high);
    let _ = writeln!(s, "{:<24} {:>9}", "  accuracy", pct(report.accuracy_high_conf));
    let _ = writeln!(s, "{:<24} {:>9}", "low confidence", report.n_low);
    let _ = writeln!(s, "{:<24} {:>9}", "  accuracy", pct(report.accuracy_low_conf));
    let _ = writeln!(s, "{:<24} {:>9}", "either branch correct", pct(Some(report.oracle_union)));
    if !report.confusion_pairs.is_empty() {
        let name = |c: usize| classes.get(c).map(String::as_str).unwrap_or("?");
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>6}  {:<32} {:<32}", "count", "true", "predicted");
        for p in report.confusion_pairs.iter().take(confusion_limit) {
            let _ = writeln!(
                s,
                "{:>6}  {:<32} {:<32}",
                p.count,
                format!("{} {}", p.true_class, name(p.true_class)),
                format!("{} {}", p.predicted_class, name(p.predicted_class))
            );
        }
    }
    s
}

pub fn write_confusion_csv(path: &Path, pairs: &[ConfusionPair], classes: &[String]) -> Result<(), EvalError> {
    let io_err = |e: csv::Error| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["true_class", "true_name", "predicted_class", "predicted_name", "count"])
        .map_err(io_err)?;
    let name = |c: usize| classes.get(c).cloned().unwrap_or_default();
    for p in pairs {
        w.write_record([
            p.true_class.to_string(),
            name(p.true_class),
            p.predicted_class.to_string(),
            name(p.predicted_class),
            p.count.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Distinct image ids, for checks that two prediction sets line up.
pub fn image_ids(preds: &[PredictionRecord]) -> HashSet<&str> {
    preds.iter().map(|p| p.image_id.as_str()).collect()
}
