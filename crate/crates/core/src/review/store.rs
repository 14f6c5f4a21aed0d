use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::state::{Choice, QueueEvent, QueueState, Resolution, ReviewCandidate, ReviewItem, ReviewStatus, SequencedEvent};
use super::QueueError;
use crate::corpus::CorpusManifest;
use crate::fusion::{Confidence, PredictionRecord};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOCK_FILE: &str = "service.lock";

/// Single-writer handle on a queue directory.
#[derive(Debug)]
pub struct QueueStore {
    dir: PathBuf,
    state: QueueState,
    log: File,
}

impl QueueStore {
    /// Opens the store, creating an empty one if the directory has no log.
    pub fn create_or_open(dir: &Path) -> Result<Self, QueueError> {
        let io_err = |source| QueueError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let events = dir.join(EVENTS_FILE);
        if !events.exists() {
            File::create(&events).map_err(io_err)?;
            write_snapshot(dir, &QueueState::default())?;
        }
        Self::open(dir)
    }

    /// Opens an existing store. The log is replayed and checked against the
    /// snapshot; a snapshot that lags the log is brought up to date, any other
    /// divergence is reported as corruption.
    pub fn open(dir: &Path) -> Result<Self, QueueError> {
        let events = read_events(dir)?;
        let snapshot = read_snapshot(dir)?;
        let corrupt = |message: String| QueueError::Corrupt {
            path: dir.to_path_buf(),
            message,
        };
        let mut state = QueueState::default();
        let mut checked = snapshot.last_seq == 0 && snapshot.items.is_empty();
        for e in &events {
            state.apply(e).map_err(|err| corrupt(format!("event {} cannot be replayed: {err}", e.seq)))?;
            if state.last_seq == snapshot.last_seq {
                if state != snapshot {
                    return Err(corrupt(format!("snapshot differs from the log replayed to seq {}", snapshot.last_seq)));
                }
                checked = true;
            }
        }
        if !checked {
            return Err(corrupt(format!(
                "snapshot is at seq {} but the log ends at seq {}",
                snapshot.last_seq, state.last_seq
            )));
        }
        if snapshot.last_seq != state.last_seq {
            write_snapshot(dir, &state)?;
        }
        let log = OpenOptions::new()
            .append(true)
            .open(dir.join(EVENTS_FILE))
            .map_err(|source| QueueError::Io {
                path: dir.join(EVENTS_FILE),
                source,
            })?;
        Ok(QueueStore {
            dir: dir.to_path_buf(),
            state,
            log,
        })
    }

    /// Discards the snapshot and derives a new one from the log.
    pub fn rebuild(dir: &Path) -> Result<Self, QueueError> {
        let events = read_events(dir)?;
        let state = QueueState::replay(&events).map_err(|err| QueueError::Corrupt {
            path: dir.to_path_buf(),
            message: format!("event log cannot be replayed: {err}"),
        })?;
        write_snapshot(dir, &state)?;
        Self::open(dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    fn append(&mut self, event: QueueEvent) -> Result<(), QueueError> {
        self.state.check(&event)?;
        let sequenced = SequencedEvent {
            seq: self.state.last_seq + 1,
            event,
        };
        let path = self.dir.join(EVENTS_FILE);
        let io_err = |source| QueueError::Io { path: path.clone(), source };
        let line = serde_json::to_string(&sequenced).expect("event serializes");
        writeln!(self.log, "{line}").map_err(io_err)?;
        self.log.flush().map_err(io_err)?;
        self.log.sync_data().map_err(io_err)?;
        self.state.apply(&sequenced)?;
        write_snapshot(&self.dir, &self.state)
    }

    /// Adds a pending item unless its image is already queued. Returns the
    /// new item id, or `None` for a duplicate.
    pub fn enqueue(&mut self, mut item: ReviewItem) -> Result<Option<u64>, QueueError> {
        if self.state.contains_image(&item.image_id) {
            return Ok(None);
        }
        item.item_id = self.state.next_item_id();
        item.status = ReviewStatus::Pending;
        item.resolution = None;
        let id = item.item_id;
        self.append(QueueEvent::Enqueued { item })?;
        Ok(Some(id))
    }

    pub fn resolve(&mut self, item_id: u64, choice: Choice, reviewer: &str, timestamp: &str) -> Result<&ReviewItem, QueueError> {
        if reviewer.trim().is_empty() {
            return Err(QueueError::InvalidResolution("reviewer must not be empty".into()));
        }
        self.append(QueueEvent::Resolved {
            item_id,
            resolution: Resolution {
                chosen_class_id: choice,
                reviewer: reviewer.to_string(),
                timestamp: timestamp.to_string(),
            },
        })?;
        Ok(self.state.get(item_id).expect("resolved item exists"))
    }
}

pub fn read_events(dir: &Path) -> Result<Vec<SequencedEvent>, QueueError> {
    let path = dir.join(EVENTS_FILE);
    let file = File::open(&path).map_err(|source| QueueError::Io { path: path.clone(), source })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| QueueError::Io { path: path.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| QueueError::Corrupt {
            path: dir.to_path_buf(),
            message: format!("event log line {} unreadable: {e}", idx + 1),
        })?);
    }
    Ok(out)
}

fn read_snapshot(dir: &Path) -> Result<QueueState, QueueError> {
    let path = dir.join(SNAPSHOT_FILE);
    let corrupt = |message: String| QueueError::Corrupt {
        path: dir.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| corrupt(format!("snapshot unreadable: {e}")))?;
    let mut state: QueueState = serde_json::from_str(&text).map_err(|e| corrupt(format!("snapshot unparseable: {e}")))?;
    state.reindex();
    Ok(state)
}

fn write_snapshot(dir: &Path, state: &QueueState) -> Result<(), QueueError> {
    let path = dir.join(SNAPSHOT_FILE);
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let io_err = |source| QueueError::Io { path: path.clone(), source };
    std::fs::write(&tmp, serde_json::to_vec(state).expect("state serializes")).map_err(io_err)?;
    std::fs::rename(&tmp, &path).map_err(io_err)
}

/// Marks a queue directory as owned by a running service. Released on drop.
#[derive(Debug)]
pub struct ServiceLock {
    path: PathBuf,
}

impl ServiceLock {
    pub fn acquire(dir: &Path) -> Result<Self, QueueError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(ServiceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(QueueError::Locked { path: dir.to_path_buf() }),
            Err(source) => Err(QueueError::Io { path, source }),
        }
    }

    pub fn is_locked(dir: &Path) -> bool {
        dir.join(LOCK_FILE).exists()
    }
}

impl Drop for ServiceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Enqueues one pending item per low-confidence prediction not yet queued.
/// Returns how many items were added.
pub fn queue_low_confidence(
    preds: &[PredictionRecord],
    manifest: &CorpusManifest,
    documents: &HashMap<String, String>,
    store: &mut QueueStore,
) -> Result<usize, QueueError> {
    if ServiceLock::is_locked(store.dir()) {
        return Err(QueueError::Locked {
            path: store.dir().to_path_buf(),
        });
    }
    let records: HashMap<&str, &crate::corpus::ImageRecord> =
        manifest.records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut added = 0;
    for p in preds.iter().filter(|p| p.confidence == Confidence::Low) {
        if p.top_k.len() < 3 {
            return Err(QueueError::TooFewCandidates {
                image_id: p.image_id.clone(),
                found: p.top_k.len(),
            });
        }
        let record = records
            .get(p.image_id.as_str())
            .ok_or_else(|| QueueError::UnknownImage(p.image_id.clone()))?;
        let item = ReviewItem {
            item_id: 0,
            image_id: p.image_id.clone(),
            image_path: record.path.clone(),
            top3: p.top_k[..3]
                .iter()
                .map(|c| ReviewCandidate {
                    class_id: c.class_id,
                    class_name: manifest.class_name(c.class_id).to_string(),
                    probability: c.probability,
                })
                .collect(),
            document: documents.get(&p.image_id).cloned().unwrap_or_default(),
            predicted_class: p.predicted_class,
            image_class: p.image_class,
            text_class: p.text_class,
            status: ReviewStatus::Pending,
            resolution: None,
        };
        if store.enqueue(item)?.is_some() {
            added += 1;
        }
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageRecord, Split};

    fn manifest(n: usize) -> CorpusManifest {
        let records = (0..n)
            .map(|i| ImageRecord {
                image_id: format!("img-{i}"),
                class_id: i % 4,
                split: Split::Test,
                retailer_id: "r".into(),
                path: format!("images/img-{i}.png"),
                width: 100,
                height: 150,
            })
            .collect();
        CorpusManifest::new((0..4).map(|c| format!("class-{c}")).collect(), records)
    }

    fn preds(n: usize, low_every: usize) -> Vec<PredictionRecord> {
        (0..n)
            .map(|i| {
                let image = [3.0, 0.0, 0.0, 0.0];
                let text = if i % low_every == low_every - 1 { [0.1, 0.6, 0.2, 0.1] } else { [0.6, 0.2, 0.1, 0.1] };
                PredictionRecord::from_branch_scores(&format!("img-{i}"), &image, &text, 2.0, 3).unwrap()
            })
            .collect()
    }

    #[test]
    fn enqueue_counts_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(100);
        let mut store = QueueStore::create_or_open(dir.path()).unwrap();
        let p = preds(100, 10);
        assert_eq!(queue_low_confidence(&p, &m, &HashMap::new(), &mut store).unwrap(), 10);
        assert_eq!(store.state().stats().pending, 10);
        assert_eq!(queue_low_confidence(&p, &m, &HashMap::new(), &mut store).unwrap(), 0);

        let all_high = preds(20, usize::MAX);
        let dir2 = tempfile::tempdir().unwrap();
        let mut store2 = QueueStore::create_or_open(dir2.path()).unwrap();
        assert_eq!(queue_low_confidence(&all_high, &m, &HashMap::new(), &mut store2).unwrap(), 0);
    }

    #[test]
    fn resolution_state_machine_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(30);
        let mut store = QueueStore::create_or_open(dir.path()).unwrap();
        let docs: HashMap<String, String> = [("img-2".to_string(), "MILCH 250g".to_string())].into();
        queue_low_confidence(&preds(30, 3), &m, &docs, &mut store).unwrap();
        let first = store.state().items.values().next().unwrap().clone();
        assert_eq!(first.document, "MILCH 250g");
        assert_eq!(first.top3.len(), 3);
        assert_eq!(first.top3[0].class_name, format!("class-{}", first.top3[0].class_id));

        store.resolve(first.item_id, Choice::Class(1), "ana", "2026-01-01T00:00:00Z").unwrap();
        assert!(matches!(
            store.resolve(first.item_id, Choice::RejectedAll, "ana", "2026-01-01T00:00:01Z"),
            Err(QueueError::AlreadyResolved(_))
        ));
        assert!(matches!(store.resolve(999, Choice::Class(0), "ana", "t"), Err(QueueError::NotFound(999))));
        let before = store.state().clone();
        drop(store);
        let reopened = QueueStore::open(dir.path()).unwrap();
        assert_eq!(reopened.state(), &before);
        assert_eq!(reopened.state().stats().resolved, 1);
    }

    #[test]
    fn lagging_snapshot_is_caught_up_and_tampered_one_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(10);
        let mut store = QueueStore::create_or_open(dir.path()).unwrap();
        queue_low_confidence(&preds(10, 2), &m, &HashMap::new(), &mut store).unwrap();
        let full = store.state().clone();
        drop(store);

        // crash between log append and snapshot write
        let prefix: Vec<SequencedEvent> = read_events(dir.path()).unwrap()[..2].to_vec();
        write_snapshot(dir.path(), &QueueState::replay(&prefix).unwrap()).unwrap();
        assert_eq!(QueueStore::open(dir.path()).unwrap().state(), &full);

        let mut bogus = full.clone();
        bogus.items.values_mut().next().unwrap().document = "edited".into();
        write_snapshot(dir.path(), &bogus).unwrap();
        let err = QueueStore::open(dir.path()).unwrap_err();
        assert!(matches!(err, QueueError::Corrupt { .. }));
        assert!(err.to_string().contains("rebuild-queue"));
        assert_eq!(QueueStore::rebuild(dir.path()).unwrap().state(), &full);
    }

    #[test]
    fn lock_blocks_enqueue() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = QueueStore::create_or_open(dir.path()).unwrap();
        let lock = ServiceLock::acquire(dir.path()).unwrap();
        assert!(matches!(ServiceLock::acquire(dir.path()), Err(QueueError::Locked { .. })));
        let err = queue_low_confidence(&preds(4, 2), &manifest(4), &HashMap::new(), &mut store).unwrap_err();
        assert!(matches!(err, QueueError::Locked { .. }));
        drop(lock);
        assert_eq!(queue_low_confidence(&preds(4, 2), &manifest(4), &HashMap::new(), &mut store).unwrap(), 2);
    }

    #[test]
    fn too_few_candidates() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = QueueStore::create_or_open(dir.path()).unwrap();
        let p = vec![PredictionRecord::from_branch_scores("img-0", &[1.0, 0.0], &[0.0, 1.0], 2.0, 2).unwrap()];
        assert!(matches!(
            queue_low_confidence(&p, &manifest(1), &HashMap::new(), &mut store),
            Err(QueueError::TooFewCandidates { .. })
        ));
    }
}
