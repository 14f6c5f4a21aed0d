//! Dataset manifest model, loading, and structural validation.
//!
//! A manifest is a JSON Lines file: one header line carrying the class table,
//! followed by one line per product image. Loading only checks syntax; the
//! dataset rules (per-class split counts, retailer disjointness, resolution
//! bounds, unique ids) are checked by [`validate_corpus`], which reports every
//! violation instead of stopping at the first one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_VERSION: &str = "1";

pub const MIN_WIDTH: u32 = 92;
pub const MIN_HEIGHT: u32 = 138;
pub const MAX_EDGE: u32 = 512;

/// Classification-side images are scaled to this longer edge.
pub const CLASSIFICATION_EDGE: u32 = 256;

pub const DEFAULT_TRAIN_PER_CLASS: usize = 40;
pub const DEFAULT_TEST_PER_CLASS: usize = 10;

/// Retailer placeholder that disables the disjointness rule for its class.
pub const UNKNOWN_RETAILER: &str = "unknown";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest line {line}: unsupported manifest version {found:?} (expected {MANIFEST_VERSION:?})")]
    UnsupportedVersion { line: usize, found: String },
    #[error("image has a zero dimension ({width}x{height})")]
    ZeroDimension { width: u32, height: u32 },
    #[error("resize target must be positive")]
    ZeroTarget,
    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub class_id: usize,
    pub split: Split,
    pub retailer_id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub version: String,
    pub classes: Vec<String>,
    pub records: Vec<ImageRecord>,
    /// Directory that record paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ManifestLine {
    Header {
        version: String,
        classes: Vec<String>,
    },
    Image(ImageRecord),
}

impl CorpusManifest {
    pub fn new(classes: Vec<String>, records: Vec<ImageRecord>) -> Self {
        CorpusManifest {
            version: MANIFEST_VERSION.to_string(),
            classes,
            records,
            base_dir: PathBuf::new(),
        }
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        self.base_dir.join(&record.path)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// image_id → class_id over the given split.
    pub fn truth(&self, split: Split) -> HashMap<String, usize> {
        self.records_in(split)
            .map(|r| (r.image_id.clone(), r.class_id))
            .collect()
    }

    pub fn class_name(&self, class_id: usize) -> &str {
        self.classes
            .get(class_id)
            .map(String::as_str)
            .unwrap_or("<unknown>")
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let header = ManifestLine::Header {
            version: self.version.clone(),
            classes: self.classes.clone(),
        };
        let line = serde_json::to_string(&header).expect("header serializes");
        writeln!(out, "{line}").map_err(io_err)?;
        for record in &self.records {
            let line = serde_json::to_string(&ManifestLine::Image(record.clone()))
                .expect("record serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Parses a manifest without checking dataset rules.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = parse_manifest(BufReader::new(file))?;
    manifest.base_dir = base_dir;
    Ok(manifest)
}

pub fn parse_manifest<R: BufRead>(reader: R) -> Result<CorpusManifest, CorpusError> {
    let mut header: Option<(String, Vec<String>)> = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        match parsed {
            ManifestLine::Header { version, classes } => {
                if header.is_some() {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        message: "duplicate header line".into(),
                    });
                }
                if !records.is_empty() {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        message: "header must precede image records".into(),
                    });
                }
                if version != MANIFEST_VERSION {
                    return Err(CorpusError::UnsupportedVersion {
                        line: line_no,
                        found: version,
                    });
                }
                header = Some((version, classes));
            }
            ManifestLine::Image(record) => {
                if header.is_none() {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        message: "image record before header".into(),
                    });
                }
                records.push(record);
            }
        }
    }
    let (version, classes) = header.unwrap_or_else(|| (MANIFEST_VERSION.to_string(), Vec::new()));
    Ok(CorpusManifest {
        version,
        classes,
        records,
        base_dir: PathBuf::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    UnknownClass,
    MinResolution,
    MaxResolution,
    DuplicateImageId,
    TrainCount,
    TestCount,
    RetailerDisjoint,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::UnknownClass => "unknown_class",
            Rule::MinResolution => "min_resolution",
            Rule::MaxResolution => "max_resolution",
            Rule::DuplicateImageId => "duplicate_image_id",
            Rule::TrainCount => "train_count",
            Rule::TestCount => "test_count",
            Rule::RetailerDisjoint => "retailer_disjoint",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub class_id: usize,
    /// Absent for class-level violations.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort_by(|a, b| {
            (a.class_id, a.image_id.as_deref().unwrap_or(""), a.rule).cmp(&(
                b.class_id,
                b.image_id.as_deref().unwrap_or(""),
                b.rule,
            ))
        });
        ValidationReport {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn count(&self, rule: Rule) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }
}

/// Checks every manifest rule and reports all violations, ordered by class
/// then image id.
pub fn validate_corpus(
    m: &CorpusManifest,
    expected_train: usize,
    expected_test: usize,
) -> ValidationReport {
    let mut violations = Vec::new();
    let n_classes = m.classes.len();

    let mut seen_ids: HashMap<&str, usize> = HashMap::new();
    for r in &m.records {
        *seen_ids.entry(r.image_id.as_str()).or_default() += 1;
    }
    let mut reported_dupes: BTreeSet<&str> = BTreeSet::new();

    for r in &m.records {
        let image = |rule: Rule, message: String| Violation {
            rule,
            class_id: r.class_id,
            image_id: Some(r.image_id.clone()),
            message,
        };
        if r.class_id >= n_classes {
            violations.push(image(
                Rule::UnknownClass,
                format!("class_id {} not in class table of {n_classes}", r.class_id),
            ));
        }
        if r.width < MIN_WIDTH || r.height < MIN_HEIGHT {
            violations.push(image(
                Rule::MinResolution,
                format!(
                    "{}x{} below minimum {MIN_WIDTH}x{MIN_HEIGHT}",
                    r.width, r.height
                ),
            ));
        }
        if r.width.max(r.height) > MAX_EDGE {
            violations.push(image(
                Rule::MaxResolution,
                format!("{}x{} exceeds longer edge {MAX_EDGE}", r.width, r.height),
            ));
        }
        if seen_ids[r.image_id.as_str()] > 1 && reported_dupes.insert(r.image_id.as_str()) {
            violations.push(image(
                Rule::DuplicateImageId,
                format!(
                    "image_id occurs {} times",
                    seen_ids[r.image_id.as_str()]
                ),
            ));
        }
    }

    // per-class split counts and retailer sets
    #[derive(Default)]
    struct ClassTally<'a> {
        train: usize,
        test: usize,
        train_retailers: BTreeSet<&'a str>,
        test_retailers: BTreeSet<&'a str>,
    }
    let mut tallies: BTreeMap<usize, ClassTally> = (0..n_classes)
        .map(|c| (c, ClassTally::default()))
        .collect();
    for r in m.records.iter().filter(|r| r.class_id < n_classes) {
        let t = tallies.get_mut(&r.class_id).expect("class tally exists");
        match r.split {
            Split::Train => {
                t.train += 1;
                t.train_retailers.insert(&r.retailer_id);
            }
            Split::Test => {
                t.test += 1;
                t.test_retailers.insert(&r.retailer_id);
            }
        }
    }
    for (class_id, t) in &tallies {
        let class = |rule: Rule, message: String| Violation {
            rule,
            class_id: *class_id,
            image_id: None,
            message,
        };
        if t.train != expected_train {
            violations.push(class(
                Rule::TrainCount,
                format!("{} training images, expected {expected_train}", t.train),
            ));
        }
        if t.test != expected_test {
            violations.push(class(
                Rule::TestCount,
                format!("{} test images, expected {expected_test}", t.test),
            ));
        }
        let unknown = t.train_retailers.contains(UNKNOWN_RETAILER)
            || t.test_retailers.contains(UNKNOWN_RETAILER);
        if !unknown {
            let shared: Vec<&str> = t
                .train_retailers
                .intersection(&t.test_retailers)
                .copied()
                .collect();
            if !shared.is_empty() {
                violations.push(class(
                    Rule::RetailerDisjoint,
                    format!("retailers in both splits: {}", shared.join(", ")),
                ));
            }
        }
    }

    ValidationReport::from_violations(violations)
}

/// Scales so the longer edge equals `target` using bilinear filtering.
/// The shorter edge is rounded to the nearest pixel.
pub fn resize_longest_edge(img: &DynamicImage, target: u32) -> Result<DynamicImage, CorpusError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(CorpusError::ZeroDimension {
            width: w,
            height: h,
        });
    }
    if target == 0 {
        return Err(CorpusError::ZeroTarget);
    }
    let (new_w, new_h) = longest_edge_dims(w, h, target);
    if (new_w, new_h) == (w, h) {
        return Ok(img.clone());
    }
    Ok(img.resize_exact(new_w, new_h, FilterType::Triangle))
}

pub fn longest_edge_dims(w: u32, h: u32, target: u32) -> (u32, u32) {
    let scale = |short: u32, long: u32| -> u32 {
        let v = (short as f64 * target as f64 / long as f64).round() as u32;
        v.max(1)
    };
    if w >= h {
        (target, scale(h, w))
    } else {
        (scale(w, h), target)
    }
}

pub fn open_image(path: &Path) -> Result<DynamicImage, CorpusError> {
    image::open(path).map_err(|source| CorpusError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Builds a manifest from a `<class>/<split>/<retailer>/<image>` directory tree.
/// Classes are sorted by directory name; image ids are `<class>/<file stem>`.
pub fn manifest_from_directory(root: &Path) -> Result<CorpusManifest, CorpusError> {
    let io_err = |path: &Path, source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let list_dirs = |dir: &Path| -> Result<Vec<PathBuf>, CorpusError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
            let entry = entry.map_err(|e| io_err(dir, e))?;
            out.push(entry.path());
        }
        out.sort();
        Ok(out)
    };

    let class_dirs: Vec<PathBuf> = list_dirs(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut classes = Vec::new();
    let mut records = Vec::new();
    for (class_id, class_dir) in class_dirs.iter().enumerate() {
        let class_name = file_name(class_dir);
        classes.push(class_name.clone());
        for (split, split_name) in [(Split::Train, "train"), (Split::Test, "test")] {
            let split_dir = class_dir.join(split_name);
            if !split_dir.is_dir() {
                continue;
            }
            for retailer_dir in list_dirs(&split_dir)?.into_iter().filter(|p| p.is_dir()) {
                let retailer_id = file_name(&retailer_dir);
                for image_path in list_dirs(&retailer_dir)? {
                    let ext = image_path
                        .extension()
                        .and_then(|e| e.to_str())
                        .map(str::to_ascii_lowercase);
                    if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
                        continue;
                    }
                    let (width, height) = image::image_dimensions(&image_path).map_err(|source| {
                        CorpusError::Decode {
                            path: image_path.clone(),
                            source,
                        }
                    })?;
                    let stem = image_path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let rel = image_path
                        .strip_prefix(root)
                        .unwrap_or(&image_path)
                        .to_string_lossy()
                        .replace('\\', "/");
                    records.push(ImageRecord {
                        image_id: format!("{class_name}/{stem}"),
                        class_id,
                        split,
                        retailer_id: retailer_id.clone(),
                        path: rel,
                        width,
                        height,
                    });
                }
            }
        }
    }
    let mut manifest = CorpusManifest::new(classes, records);
    manifest.base_dir = root.to_path_buf();
    Ok(manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
