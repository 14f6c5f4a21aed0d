use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{ExtractedDocument, OcrError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheVersions {
    pub engine_version: String,
    pub methods_version: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum CacheLine {
    Header(CacheVersions),
    Document(ExtractedDocument),
}

/// Append-only JSON Lines store of extracted documents.
///
/// Each header line declares the versions of the documents that follow it;
/// documents whose versions differ from the cache's active versions are
/// ignored on read. Appends are serialized through one writer.
#[derive(Debug)]
pub struct ExtractionCache {
    path: PathBuf,
    versions: CacheVersions,
    entries: RwLock<HashMap<String, ExtractedDocument>>,
    writer: Option<Mutex<BufWriter<File>>>,
}

struct Scan {
    last_header: Option<CacheVersions>,
    documents: Vec<ExtractedDocument>,
    /// Byte length of the well-formed prefix.
    valid_len: u64,
}

fn scan(path: &Path) -> Result<Scan, OcrError> {
    let text = std::fs::read_to_string(path).map_err(|source| OcrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut last_header = None;
    let mut documents = Vec::new();
    let mut offset = 0usize;
    let mut valid_len = 0usize;
    let segments: Vec<&str> = text.split_inclusive('\n').collect();
    for (idx, segment) in segments.iter().enumerate() {
        offset += segment.len();
        let terminated = segment.ends_with('\n');
        let line = segment.trim();
        if line.is_empty() {
            valid_len = offset;
            continue;
        }
        match serde_json::from_str::<CacheLine>(line) {
            Ok(CacheLine::Header(v)) => last_header = Some(v),
            Ok(CacheLine::Document(d)) => documents.push(d),
            Err(e) if !terminated && idx + 1 == segments.len() => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring torn final cache line");
                break;
            }
            Err(e) => {
                return Err(OcrError::CorruptCache {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
        valid_len = offset;
    }
    Ok(Scan {
        last_header,
        documents,
        valid_len: valid_len as u64,
    })
}

impl ExtractionCache {
    /// Opens (or creates) a cache for writing under `versions`. A header is
    /// appended when the file's latest header names different versions.
    pub fn open(path: &Path, versions: CacheVersions) -> Result<Self, OcrError> {
        let io_err = |source| OcrError::Io {
            path: path.to_path_buf(),
            source,
        };
        let (last_header, documents, valid_len) = if path.exists() {
            let s = scan(path)?;
            (s.last_header, s.documents, Some(s.valid_len))
        } else {
            (None, Vec::new(), None)
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        if let Some(len) = valid_len {
            if file.metadata().map_err(io_err)?.len() != len {
                file.set_len(len).map_err(io_err)?;
            }
        }
        let mut writer = BufWriter::new(file);
        if last_header.as_ref() != Some(&versions) {
            let line = serde_json::to_string(&CacheLine::Header(versions.clone())).expect("header serializes");
            writeln!(writer, "{line}").map_err(io_err)?;
            writer.flush().map_err(io_err)?;
        }
        let entries = documents
            .into_iter()
            .filter(|d| d.matches(&versions))
            .map(|d| (d.image_id.clone(), d))
            .collect();
        Ok(ExtractionCache {
            path: path.to_path_buf(),
            versions,
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(writer)),
        })
    }

    /// Read-only view under the file's latest header.
    pub fn open_read_only(path: &Path) -> Result<Self, OcrError> {
        let s = scan(path)?;
        let versions = s.last_header.ok_or_else(|| OcrError::CorruptCache {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header line".into(),
        })?;
        let entries = s
            .documents
            .into_iter()
            .filter(|d| d.matches(&versions))
            .map(|d| (d.image_id.clone(), d))
            .collect();
        Ok(ExtractionCache {
            path: path.to_path_buf(),
            versions,
            entries: RwLock::new(entries),
            writer: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn versions(&self) -> &CacheVersions {
        &self.versions
    }

    pub fn get(&self, image_id: &str) -> Option<ExtractedDocument> {
        self.entries.read().expect("cache lock").get(image_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All current-version documents ordered by image id.
    pub fn documents(&self) -> Vec<ExtractedDocument> {
        let mut docs: Vec<_> = self.entries.read().expect("cache lock").values().cloned().collect();
        docs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        docs
    }

    pub fn insert(&self, doc: ExtractedDocument) -> Result<(), OcrError> {
        self.insert_batch(vec![doc])
    }

    /// Appends documents in the given order with one flush.
    pub fn insert_batch(&self, docs: Vec<ExtractedDocument>) -> Result<(), OcrError> {
        let writer = self.writer.as_ref().ok_or_else(|| OcrError::Io {
            path: self.path.clone(),
            source: std::io::Error::new(std::io::ErrorKind::PermissionDenied, "cache opened read-only"),
        })?;
        let io_err = |source| OcrError::Io {
            path: self.path.clone(),
            source,
        };
        let mut w = writer.lock().expect("cache writer lock");
        for doc in &docs {
            if !doc.matches(&self.versions) {
                return Err(OcrError::CorruptCache {
                    path: self.path.clone(),
                    line: 0,
                    message: format!("document {} has versions other than the cache's", doc.image_id),
                });
            }
            let line = serde_json::to_string(&CacheLine::Document(doc.clone())).expect("document serializes");
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        drop(w);
        let mut entries = self.entries.write().expect("cache lock");
        for doc in docs {
            entries.insert(doc.image_id.clone(), doc);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocr::compose_document;

    fn versions(engine: &str) -> CacheVersions {
        CacheVersions {
            engine_version: engine.into(),
            methods_version: "v1:1,2".into(),
        }
    }

    fn doc(id: &str, v: &CacheVersions, texts: &[&str]) -> ExtractedDocument {
        let method_texts: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
        ExtractedDocument {
            image_id: id.into(),
            document: compose_document(&method_texts),
            method_texts,
            engine_version: v.engine_version.clone(),
            methods_version: v.methods_version.clone(),
        }
    }

    #[test]
    fn round_trip_and_stale_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let v1 = versions("tess 5.3");
        {
            let c = ExtractionCache::open(&path, v1.clone()).unwrap();
            c.insert(doc("b", &v1, &["x", "y"])).unwrap();
            c.insert(doc("a", &v1, &["", "z"])).unwrap();
        }
        let c = ExtractionCache::open_read_only(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents()[0].image_id, "a");
        assert_eq!(c.get("b").unwrap().document, "x y");

        let v2 = versions("tess 5.4");
        {
            let c = ExtractionCache::open(&path, v2.clone()).unwrap();
            assert!(c.is_empty(), "old-engine documents are stale");
            c.insert(doc("a", &v2, &["new", ""])).unwrap();
        }
        let c = ExtractionCache::open_read_only(&path).unwrap();
        assert_eq!(c.versions(), &v2);
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("a").unwrap().document, "new");

        // reopening under the first versions brings the old documents back
        let c = ExtractionCache::open(&path, v1).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let v = versions("e");
        {
            let c = ExtractionCache::open(&path, v.clone()).unwrap();
            c.insert(doc("a", &v, &["t"])).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"type\":\"document\",\"image_id\":\"b\",\"meth").unwrap();
        drop(f);
        let c = ExtractionCache::open(&path, v.clone()).unwrap();
        assert_eq!(c.len(), 1);
        c.insert(doc("c", &v, &["u"])).unwrap();
        drop(c);
        let c = ExtractionCache::open_read_only(&path).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(
            &path,
            "{\"type\":\"header\",\"engine_version\":\"e\",\"methods_version\":\"m\"}\nnot json\n",
        )
        .unwrap();
        assert!(matches!(
            ExtractionCache::open_read_only(&path),
            Err(OcrError::CorruptCache { line: 2, .. })
        ));
    }
}
