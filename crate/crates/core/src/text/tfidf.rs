use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TextModelError;

/// Lowercases, then yields maximal alphanumeric runs of at least two chars.
/// Punctuation and symbols split tokens; nothing else is removed.
pub fn tokenize(doc: &str) -> Vec<String> {
    let lower = doc.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVocabulary {
    /// Sorted lexicographically; the index is the feature column.
    pub token_to_index: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub document_count: usize,
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| dense[i] * v)
            .sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Smoothed inverse document frequency: ln((1 + n) / (1 + df)) + 1.
pub fn smoothed_idf(document_count: usize, df: usize) -> f64 {
    ((1.0 + document_count as f64) / (1.0 + df as f64)).ln() + 1.0
}

pub fn fit_vectorizer<S: AsRef<str>>(docs: &[S]) -> Result<TfidfVocabulary, TextModelError> {
    if docs.is_empty() {
        return Err(TextModelError::NoDocuments);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let distinct: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
        for token in distinct {
            *df.entry(token).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(TextModelError::EmptyVocabulary);
    }
    let n = docs.len();
    let mut token_to_index = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (token, count)) in df.into_iter().enumerate() {
        token_to_index.insert(token, i);
        idf.push(smoothed_idf(n, count));
    }
    Ok(TfidfVocabulary {
        token_to_index,
        idf,
        document_count: n,
    })
}

impl TfidfVocabulary {
    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    /// Raw counts times idf, then L2-normalized. Unknown tokens are dropped;
    /// a document with no known tokens maps to the zero vector.
    pub fn vectorize(&self, doc: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(doc) {
            if let Some(i) = self.index_of(&token) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut indices = Vec::with_capacity(counts.len());
        let mut values = Vec::with_capacity(counts.len());
        for (i, c) in counts {
            indices.push(i);
            values.push(c * self.idf[i]);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        SparseVector { indices, values }
    }
}

pub fn vectorize(doc: &str, vocab: &TfidfVocabulary) -> SparseVector {
    vocab.vectorize(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_document_idf() {
        let v = fit_vectorizer(&["aa bb", "aa cc"]).unwrap();
        assert_eq!(v.document_count, 2);
        let keys: Vec<&str> = v.token_to_index.keys().map(String::as_str).collect();
        assert_eq!(keys, vec!["aa", "bb", "cc"]);
        assert_abs_diff_eq!(v.idf[v.index_of("aa").unwrap()], 1.0, epsilon = 1e-12);
        // ln(3/2) + 1
        assert_abs_diff_eq!(v.idf[v.index_of("bb").unwrap()], 1.405_465_108_108_164_4, epsilon = 1e-12);
    }

    #[test]
    fn single_char_tokens_leave_empty_vocabulary() {
        assert!(matches!(fit_vectorizer(&["x y z"]), Err(TextModelError::EmptyVocabulary)));
        assert!(matches!(fit_vectorizer::<&str>(&[]), Err(TextModelError::NoDocuments)));
    }

    #[test]
    fn plus_is_a_separator() {
        assert_eq!(tokenize("250g + 40g"), vec!["250g", "40g"]);
        assert_eq!(tokenize("Kaffee-CREMA 1,5L"), vec!["kaffee", "crema", "5l"]);
    }

    #[test]
    fn vectorize_examples() {
        let v = fit_vectorizer(&["aa bb", "aa cc"]).unwrap();
        let one = v.vectorize("cc");
        assert_eq!(one.indices, vec![2]);
        assert_eq!(one.values, vec![1.0]);
        assert!(v.vectorize("").is_zero());
        assert!(v.vectorize("zz qq").is_zero());

        // counts x idf = (2 * 1.0, 1 * 1.4055), then L2
        let x = v.vectorize("aa aa bb");
        let a = 2.0;
        let b = (1.5f64).ln() + 1.0;
        let n = (a * a + b * b).sqrt();
        assert_abs_diff_eq!(x.values[0], a / n, epsilon = 1e-12);
        assert_abs_diff_eq!(x.values[1], b / n, epsilon = 1e-12);
        assert_abs_diff_eq!(x.values[0], 0.8182, epsilon = 1e-4);
        assert_abs_diff_eq!(x.values[1], 0.5750, epsilon = 1e-4);
    }

    #[test]
    fn idf_lower_bound() {
        // df == n gives exactly 1; the bound 1 - ln 2 covers any df <= n
        for n in 1..50 {
            for df in 1..=n {
                let idf = smoothed_idf(n, df);
                assert!(idf >= 1.0 - 2f64.ln() && idf.is_finite());
            }
        }
    }
}
