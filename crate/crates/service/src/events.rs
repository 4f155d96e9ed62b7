//! Append-only JSONL event log and the state it folds into.
//!
//! Each line is `{"ts": <unix ms>, "event": <name>, "payload": {...}}`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::types::{ItemStatus, ModerationItem, ServiceConfig, ServiceStats, StatusFilter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "snake_case")]
pub enum Event {
    ConfigSet(ServiceConfig),
    ItemClassified(ModerationItem),
    DecisionSubmitted(Decision),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub item_id: u64,
    pub label: usize,
    pub moderator_id: String,
    pub resolved_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Service state; always equal to the fold of the log's events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServiceState {
    pub config: Option<ServiceConfig>,
    pub items: BTreeMap<u64, ModerationItem>,
    last_id: u64,
}

impl ServiceState {
    /// Ids start at 1 and are never reused.
    pub fn next_item_id(&self) -> u64 {
        self.last_id + 1
    }

    /// Rejects an event that would violate an invariant of this state.
    pub fn check(&self, event: &Event) -> Result<(), String> {
        match event {
            Event::ConfigSet(config) => config.validate().map_err(|e| e.to_string()),
            Event::ItemClassified(item) => {
                let config = self
                    .config
                    .as_ref()
                    .ok_or("item classified before any configuration")?;
                if item.item_id <= self.last_id {
                    return Err(format!(
                        "item id {} does not increase (last {})",
                        item.item_id, self.last_id
                    ));
                }
                if !item.is_consistent() || item.status == ItemStatus::Resolved {
                    return Err(format!("item {} has an inconsistent status", item.item_id));
                }
                if item.class_probabilities.len() != config.class_names.len()
                    || item.predicted_label >= config.class_names.len()
                {
                    return Err(format!("item {} does not match the class list", item.item_id));
                }
                let auto = config.threshold.accepts(item.uncertainty.value);
                if auto != (item.status == ItemStatus::Auto) {
                    return Err(format!(
                        "item {} routed {} against threshold {}",
                        item.item_id, item.status, config.threshold
                    ));
                }
                Ok(())
            }
            Event::DecisionSubmitted(d) => {
                let classes = self.config.as_ref().map_or(0, |c| c.class_names.len());
                let item = self
                    .items
                    .get(&d.item_id)
                    .ok_or_else(|| format!("decision for unknown item {}", d.item_id))?;
                if item.status != ItemStatus::Pending {
                    return Err(format!("decision for item {} which is not pending", d.item_id));
                }
                if d.label >= classes {
                    return Err(format!("label {} out of range", d.label));
                }
                if d.moderator_id.trim().is_empty() {
                    return Err("empty moderator id".into());
                }
                Ok(())
            }
        }
    }

    /// Applies one event after [`check`](Self::check)ing it.
    pub fn apply(&mut self, event: &Event) -> Result<(), String> {
        self.check(event)?;
        match event {
            Event::ConfigSet(config) => self.config = Some(config.clone()),
            Event::ItemClassified(item) => {
                self.last_id = item.item_id;
                self.items.insert(item.item_id, item.clone());
            }
            Event::DecisionSubmitted(d) => {
                let item = self.items.get_mut(&d.item_id).expect("checked");
                item.status = ItemStatus::Resolved;
                item.final_label = Some(d.label);
                item.moderator_id = Some(d.moderator_id.clone());
                item.resolved_ms = Some(d.resolved_ms);
            }
        }
        Ok(())
    }

    /// Items matching `filter`, ordered by uncertainty descending then id.
    pub fn queue(&self, filter: StatusFilter, limit: Option<usize>, offset: usize) -> Vec<ModerationItem> {
        let mut items: Vec<&ModerationItem> = self
            .items
            .values()
            .filter(|i| filter.matches(i.status))
            .collect();
        items.sort_by(|a, b| {
            b.uncertainty
                .value
                .total_cmp(&a.uncertainty.value)
                .then(a.item_id.cmp(&b.item_id))
        });
        items
            .into_iter()
            .skip(offset)
            .take(limit.unwrap_or(usize::MAX))
            .cloned()
            .collect()
    }

    pub fn stats(&self) -> Option<ServiceStats> {
        let config = self.config.as_ref()?;
        let count = |s| self.items.values().filter(|i| i.status == s).count();
        let (auto, pending, resolved) = (
            count(ItemStatus::Auto),
            count(ItemStatus::Pending),
            count(ItemStatus::Resolved),
        );
        let total = self.items.len();
        Some(ServiceStats {
            total,
            auto_count: auto,
            pending_count: pending,
            resolved_count: resolved,
            moderation_load: if total == 0 {
                0.0
            } else {
                (pending + resolved) as f64 / total as f64
            },
            threshold: config.threshold,
        })
    }

    /// Items with a final label, one JSON object per line, by item id.
    pub fn decisions_jsonl(&self) -> String {
        let mut out = String::new();
        for item in self.items.values().filter(|i| i.final_label.is_some()) {
            out.push_str(&serde_json::to_string(item).expect("items serialise"));
            out.push('\n');
        }
        out
    }
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::storage(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and flushes it before returning.
    pub fn append(&mut self, entry: &LogEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry).expect("events serialise");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|()| self.file.flush())
            .map_err(|e| ServiceError::storage(&self.path, e))
    }
}

/// Outcome of [`replay_log`].
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub state: ServiceState,
    pub events: usize,
    /// Bytes dropped from a corrupt final line, if any.
    pub truncated_bytes: Option<u64>,
}

/// Rebuilds state from the log at `path`; a missing file is an empty log.
///
/// A final line that does not parse (an interrupted write) is cut off and a
/// warning is logged. Any other unparsable or invalid line is an error.
pub fn replay_log(path: impl AsRef<Path>) -> Result<Replay> {
    let path = path.as_ref();
    let content = match fs::read(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(ServiceError::storage(path, e)),
    };
    let corrupt = |line: usize, message: String| ServiceError::CorruptLog {
        path: path.to_path_buf(),
        line,
        message,
    };

    // (line number, start offset, bytes) of non-blank lines.
    let mut lines = Vec::new();
    let mut start = 0;
    for (no, raw) in content.split(|&b| b == b'\n').enumerate() {
        if !raw.iter().all(u8::is_ascii_whitespace) {
            lines.push((no + 1, start, raw));
        }
        start += raw.len() + 1;
    }

    let mut state = ServiceState::default();
    let mut events = 0;
    let mut truncated_bytes = None;
    let last = lines.len().saturating_sub(1);
    for (i, &(no, offset, raw)) in lines.iter().enumerate() {
        let entry: LogEntry = match serde_json::from_slice(raw) {
            Ok(entry) => entry,
            Err(e) if i == last => {
                let dropped = content.len() as u64 - offset as u64;
                log::warn!(
                    "{}: dropping corrupt final line {no} ({dropped} bytes): {e}",
                    path.display()
                );
                truncate(path, offset as u64)?;
                truncated_bytes = Some(dropped);
                break;
            }
            Err(e) => return Err(corrupt(no, e.to_string())),
        };
        state.apply(&entry.event).map_err(|m| corrupt(no, m))?;
        events += 1;
    }
    if truncated_bytes.is_none() && content.last().is_some_and(|&b| b != b'\n') {
        // Complete final event without its newline; terminate it so the next
        // append starts a fresh line.
        let mut file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::storage(path, e))?;
        file.write_all(b"\n").map_err(|e| ServiceError::storage(path, e))?;
    }
    Ok(Replay {
        state,
        events,
        truncated_bytes,
    })
}

fn truncate(path: &Path, len: u64) -> Result<()> {
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| ServiceError::storage(path, e))?;
    file.set_len(len).map_err(|e| ServiceError::storage(path, e))
}
