//! Review queue for low-confidence predictions.
//!
//! State is event-sourced: an append-only JSON Lines log of `enqueued` and
//! `resolved` events is the source of truth, and a snapshot file holds the
//! state derived from it. Replaying the log over an empty state must give
//! the snapshot back.

mod state;
mod store;

pub use state::{
    Choice, QueueEvent, QueueState, QueueStats, Resolution, ReviewCandidate, ReviewItem, ReviewStatus, SequencedEvent,
};
pub use store::{queue_low_confidence, read_events, QueueStore, ServiceLock, EVENTS_FILE, LOCK_FILE, SNAPSHOT_FILE};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("item {0} not found")]
    NotFound(u64),
    #[error("item {0} is already resolved")]
    AlreadyResolved(u64),
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("prediction for {image_id} has only {found} candidates; at least 3 are needed for review")]
    TooFewCandidates { image_id: String, found: usize },
    #[error("prediction {0} refers to an image missing from the manifest")]
    UnknownImage(String),
    #[error("corrupt queue store at {path}: {message}. The event log is authoritative: run `leaflet rebuild-queue --queue {path}` to rebuild the snapshot from events.jsonl")]
    Corrupt { path: PathBuf, message: String },
    #[error("queue store {path} is locked by a running review service (remove {path}/service.lock if no service is running)")]
    Locked { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
