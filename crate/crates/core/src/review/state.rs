use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::QueueError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewCandidate {
    pub class_id: usize,
    pub class_name: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Resolved,
}

/// A reviewer's verdict: one class, or none of the candidates.
/// Serialized as the class id or the string `"rejected_all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Class(usize),
    RejectedAll,
}

impl Serialize for Choice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Choice::Class(c) => s.serialize_u64(*c as u64),
            Choice::RejectedAll => s.serialize_str("rejected_all"),
        }
    }
}

impl<'de> Deserialize<'de> for Choice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Class(usize),
            Keyword(String),
        }
        match Repr::deserialize(d)? {
            Repr::Class(c) => Ok(Choice::Class(c)),
            Repr::Keyword(k) if k == "rejected_all" => Ok(Choice::RejectedAll),
            Repr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "expected a class id or \"rejected_all\", got {k:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub chosen_class_id: Choice,
    pub reviewer: String,
    /// RFC 3339.
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: u64,
    pub image_id: String,
    /// Relative to the manifest directory.
    pub image_path: String,
    pub top3: Vec<ReviewCandidate>,
    pub document: String,
    pub predicted_class: usize,
    pub image_class: usize,
    pub text_class: usize,
    pub status: ReviewStatus,
    #[serde(default)]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum QueueEvent {
    Enqueued { item: ReviewItem },
    Resolved { item_id: u64, resolution: Resolution },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: QueueEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub pending: usize,
    pub resolved: usize,
    pub rejected_all: usize,
    /// Share of resolved items where the reviewer kept the fused top-1 class.
    pub agreement_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QueueState {
    pub last_seq: u64,
    pub items: BTreeMap<u64, ReviewItem>,
    #[serde(skip)]
    by_image: HashMap<String, u64>,
}

impl PartialEq for QueueState {
    fn eq(&self, other: &Self) -> bool {
        self.last_seq == other.last_seq && self.items == other.items
    }
}

impl QueueState {
    pub fn replay<'a, I: IntoIterator<Item = &'a SequencedEvent>>(events: I) -> Result<Self, QueueError> {
        let mut state = QueueState::default();
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub(crate) fn reindex(&mut self) {
        self.by_image = self.items.values().map(|i| (i.image_id.clone(), i.item_id)).collect();
    }

    pub fn next_item_id(&self) -> u64 {
        self.items.keys().next_back().map_or(1, |k| k + 1)
    }

    pub fn contains_image(&self, image_id: &str) -> bool {
        self.by_image.contains_key(image_id)
    }

    pub fn get(&self, item_id: u64) -> Option<&ReviewItem> {
        self.items.get(&item_id)
    }

    pub fn items_with_status(&self, status: ReviewStatus) -> impl Iterator<Item = &ReviewItem> {
        self.items.values().filter(move |i| i.status == status)
    }

    /// Checks that `event` is a legal transition without applying it.
    pub fn check(&self, event: &QueueEvent) -> Result<(), QueueError> {
        match event {
            QueueEvent::Enqueued { item } => {
                if self.items.contains_key(&item.item_id) {
                    return Err(QueueError::InvalidResolution(format!("item id {} reused", item.item_id)));
                }
                if self.contains_image(&item.image_id) {
                    return Err(QueueError::InvalidResolution(format!("image {} already queued", item.image_id)));
                }
                if item.status != ReviewStatus::Pending || item.resolution.is_some() {
                    return Err(QueueError::InvalidResolution("new items must be pending".into()));
                }
                if item.top3.windows(2).any(|w| w[0].probability < w[1].probability) {
                    return Err(QueueError::InvalidResolution("candidates not in descending order".into()));
                }
                Ok(())
            }
            QueueEvent::Resolved { item_id, .. } => match self.items.get(item_id) {
                None => Err(QueueError::NotFound(*item_id)),
                Some(i) if i.status == ReviewStatus::Resolved => Err(QueueError::AlreadyResolved(*item_id)),
                Some(_) => Ok(()),
            },
        }
    }

    pub fn apply(&mut self, e: &SequencedEvent) -> Result<(), QueueError> {
        if e.seq != self.last_seq + 1 {
            return Err(QueueError::InvalidResolution(format!(
                "event sequence gap: expected {}, found {}",
                self.last_seq + 1,
                e.seq
            )));
        }
        self.check(&e.event)?;
        match &e.event {
            QueueEvent::Enqueued { item } => {
                self.by_image.insert(item.image_id.clone(), item.item_id);
                self.items.insert(item.item_id, item.clone());
            }
            QueueEvent::Resolved { item_id, resolution } => {
                let item = self.items.get_mut(item_id).expect("checked above");
                item.status = ReviewStatus::Resolved;
                item.resolution = Some(resolution.clone());
            }
        }
        self.last_seq = e.seq;
        Ok(())
    }

    pub fn stats(&self) -> QueueStats {
        let mut pending = 0;
        let mut resolved = 0;
        let mut rejected_all = 0;
        let mut agreed = 0;
        for item in self.items.values() {
            match &item.resolution {
                None => pending += 1,
                Some(r) => {
                    resolved += 1;
                    match r.chosen_class_id {
                        Choice::RejectedAll => rejected_all += 1,
                        Choice::Class(c) if c == item.predicted_class => agreed += 1,
                        Choice::Class(_) => {}
                    }
                }
            }
        }
        QueueStats {
            pending,
            resolved,
            rejected_all,
            agreement_rate: (resolved > 0).then(|| agreed as f64 / resolved as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choice_wire_format() {
        assert_eq!(serde_json::to_string(&Choice::Class(4)).unwrap(), "4");
        assert_eq!(serde_json::to_string(&Choice::RejectedAll).unwrap(), "\"rejected_all\"");
        assert_eq!(serde_json::from_str::<Choice>("12").unwrap(), Choice::Class(12));
        assert_eq!(serde_json::from_str::<Choice>("\"rejected_all\"").unwrap(), Choice::RejectedAll);
        assert!(serde_json::from_str::<Choice>("\"maybe\"").is_err());
        assert!(serde_json::from_str::<Choice>("-1").is_err());
    }
}
