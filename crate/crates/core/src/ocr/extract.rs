use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{CacheVersions, ExtractionCache};
use super::methods::{methods_version, ExtractionMethodSpec};
use super::{ocr_extract, preprocess, OcrEngine, OcrError};
use crate::corpus::{CorpusManifest, ImageRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedDocument {
    pub image_id: String,
    /// One entry per method, in method-id order.
    pub method_texts: Vec<String>,
    pub document: String,
    pub engine_version: String,
    pub methods_version: String,
}

impl ExtractedDocument {
    pub(crate) fn matches(&self, v: &CacheVersions) -> bool {
        self.engine_version == v.engine_version && self.methods_version == v.methods_version
    }

    /// True when `document` is the space join of the non-empty method texts.
    pub fn is_well_formed(&self) -> bool {
        self.document == compose_document(&self.method_texts)
    }
}

/// Joins non-empty method outputs with single spaces; repeated text is kept.
pub fn compose_document<S: AsRef<str>>(method_texts: &[S]) -> String {
    method_texts
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn run_methods(
    img_path: &Path,
    image_id: &str,
    specs: &[ExtractionMethodSpec],
    engine: &dyn OcrEngine,
    versions: &CacheVersions,
) -> Result<ExtractedDocument, OcrError> {
    let img = image::open(img_path).map_err(|e| OcrError::UnreadableImage {
        path: img_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut ordered: Vec<&ExtractionMethodSpec> = specs.iter().collect();
    ordered.sort_by_key(|s| s.method_id());
    let mut method_texts = Vec::with_capacity(ordered.len());
    for spec in ordered {
        let prepared = preprocess(&img, spec)?;
        method_texts.push(ocr_extract(engine, &prepared, spec.psm())?);
    }
    Ok(ExtractedDocument {
        image_id: image_id.to_string(),
        document: compose_document(&method_texts),
        method_texts,
        engine_version: versions.engine_version.clone(),
        methods_version: versions.methods_version.clone(),
    })
}

fn versions_for(engine: &dyn OcrEngine, specs: &[ExtractionMethodSpec]) -> CacheVersions {
    let mut sorted = specs.to_vec();
    sorted.sort_by_key(|s| s.method_id());
    CacheVersions {
        engine_version: engine.version(),
        methods_version: methods_version(&sorted),
    }
}

/// Extracts one image, consulting the cache first. The cache is used only
/// when its versions match the engine and method set.
pub fn extract_document(
    img_path: &Path,
    image_id: &str,
    specs: &[ExtractionMethodSpec],
    engine: &dyn OcrEngine,
    cache: Option<&ExtractionCache>,
) -> Result<ExtractedDocument, OcrError> {
    let versions = versions_for(engine, specs);
    let cache = cache.filter(|c| c.versions() == &versions);
    if let Some(hit) = cache.and_then(|c| c.get(image_id)) {
        return Ok(hit);
    }
    let doc = run_methods(img_path, image_id, specs, engine, &versions)?;
    if let Some(c) = cache {
        c.insert(doc.clone())?;
    }
    Ok(doc)
}

const CHUNK: usize = 32;

/// Extracts every record on a pool of `workers` threads. Cache misses are
/// processed in image-id order, chunk by chunk, and each chunk is appended
/// to the cache sorted, so output is independent of the worker count.
pub fn extract_corpus(
    manifest: &CorpusManifest,
    records: &[&ImageRecord],
    specs: &[ExtractionMethodSpec],
    engine: &dyn OcrEngine,
    cache: &ExtractionCache,
    workers: usize,
) -> Result<Vec<ExtractedDocument>, OcrError> {
    let versions = versions_for(engine, specs);
    if cache.versions() != &versions {
        return Err(OcrError::CorruptCache {
            path: cache.path().to_path_buf(),
            line: 0,
            message: format!(
                "cache opened for {:?} but extraction uses {:?}",
                cache.versions(),
                versions
            ),
        });
    }
    let mut sorted: Vec<&ImageRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let missing: Vec<&ImageRecord> = sorted
        .iter()
        .copied()
        .filter(|r| cache.get(&r.image_id).is_none())
        .collect();
    tracing::info!(total = sorted.len(), missing = missing.len(), workers, "extracting text");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let mut done = 0;
    for chunk in missing.chunks(CHUNK) {
        let docs: Result<Vec<ExtractedDocument>, OcrError> = pool.install(|| {
            chunk
                .par_iter()
                .map(|r| run_methods(&manifest.image_path(r), &r.image_id, specs, engine, &versions))
                .collect()
        });
        cache.insert_batch(docs?)?;
        done += chunk.len();
        tracing::debug!(done, "chunk appended");
    }

    Ok(sorted
        .iter()
        .map(|r| cache.get(&r.image_id).expect("extracted above"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocr::canonical_methods;
    use image::{DynamicImage, GenericImageView};
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replies with canned strings in call order.
    struct Fake {
        calls: AtomicUsize,
        replies: Vec<&'static str>,
    }

    impl OcrEngine for Fake {
        fn version(&self) -> String {
            "fake-1".into()
        }
        fn recognize(&self, img: &DynamicImage, _psm: u8) -> Result<String, OcrError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            assert!(img.dimensions().0 > 0);
            Ok(self.replies[n % self.replies.len()].to_string())
        }
    }

    fn write_image(dir: &Path, name: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        image::RgbImage::from_pixel(20, 30, image::Rgb([250, 250, 250])).save(&p).unwrap();
        p
    }

    #[test]
    fn empty_outputs_give_empty_document() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "a.png");
        let engine = Fake {
            calls: AtomicUsize::new(0),
            replies: vec![""],
        };
        let doc = extract_document(&p, "a", &canonical_methods(), &engine, None).unwrap();
        assert_eq!(doc.method_texts.len(), 8);
        assert_eq!(doc.document, "");
    }

    #[test]
    fn duplicates_are_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "a.png");
        let engine = Fake {
            calls: AtomicUsize::new(0),
            replies: vec!["ab", "ab", "cd", "", "", "", "", ""],
        };
        let doc = extract_document(&p, "a", &canonical_methods(), &engine, None).unwrap();
        assert_eq!(doc.document, "ab ab cd");
        assert!(doc.is_well_formed());
    }

    #[test]
    fn warm_cache_skips_engine() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "a.png");
        let engine = Fake {
            calls: AtomicUsize::new(0),
            replies: vec!["MILCH", "250g"],
        };
        let specs = canonical_methods();
        let cache = ExtractionCache::open(&dir.path().join("c.jsonl"), versions_for(&engine, &specs)).unwrap();
        let cold = extract_document(&p, "a", &specs, &engine, Some(&cache)).unwrap();
        assert_eq!(engine.calls.load(Ordering::SeqCst), 8);
        let warm = extract_document(&p, "a", &specs, &engine, Some(&cache)).unwrap();
        assert_eq!(engine.calls.load(Ordering::SeqCst), 8);
        assert_eq!(cold, warm);
        assert_eq!(
            serde_json::to_string(&cold).unwrap(),
            serde_json::to_string(&warm).unwrap()
        );
    }

    #[test]
    fn unreadable_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"not a png").unwrap();
        let engine = Fake {
            calls: AtomicUsize::new(0),
            replies: vec!["x"],
        };
        assert!(matches!(
            extract_document(&p, "b", &canonical_methods(), &engine, None),
            Err(OcrError::UnreadableImage { .. })
        ));
    }
}
