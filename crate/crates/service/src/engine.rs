use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use modq_core::moderation::Threshold;
use parking_lot::{Mutex, RwLock};

use crate::error::{Result, ServiceError};
use crate::events::{replay_log, Decision, Event, EventLog, LogEntry, ServiceState};
use crate::scorer::Scorer;
use crate::types::{ItemStatus, ModerationItem, ServiceConfig, ServiceStats, StatusFilter};

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    })
}

/// The live moderated classifier.
///
/// Every mutation holds `writer` for its whole duration: it validates against
/// the current state, appends the event, and only then applies it to `state`.
/// Readers take `state` alone and never observe an event that is not on disk.
pub struct Service {
    state: RwLock<ServiceState>,
    writer: Mutex<EventLog>,
    scorer: Option<Arc<dyn Scorer>>,
    clock: Clock,
}

impl Service {
    /// Replays the log at `log_path` and appends `config` if it differs from
    /// the replayed configuration.
    pub fn open(
        log_path: impl AsRef<Path>,
        scorer: Option<Arc<dyn Scorer>>,
        config: Option<ServiceConfig>,
    ) -> Result<Self> {
        Self::open_with_clock(log_path, scorer, config, system_clock())
    }

    pub fn open_with_clock(
        log_path: impl AsRef<Path>,
        scorer: Option<Arc<dyn Scorer>>,
        config: Option<ServiceConfig>,
        clock: Clock,
    ) -> Result<Self> {
        let replay = replay_log(&log_path)?;
        log::info!(
            "replayed {} events from {}",
            replay.events,
            log_path.as_ref().display()
        );
        let service = Self {
            state: RwLock::new(replay.state),
            writer: Mutex::new(EventLog::open(&log_path)?),
            scorer,
            clock,
        };
        match config {
            Some(config) => {
                if let Some(scorer) = &service.scorer {
                    if scorer.num_classes() != config.class_names.len() {
                        return Err(ServiceError::Validation(format!(
                            "model has {} classes but the configuration names {}",
                            scorer.num_classes(),
                            config.class_names.len()
                        )));
                    }
                }
                if service.state.read().config.as_ref() != Some(&config) {
                    let mut writer = service.writer.lock();
                    service.commit(&mut writer, Event::ConfigSet(config))?;
                }
            }
            None if service.state.read().config.is_none() => {
                return Err(ServiceError::Validation(
                    "no configuration given and none found in the event log".into(),
                ));
            }
            None => {}
        }
        Ok(service)
    }

    /// Caller holds the writer lock, so the state cannot change between the
    /// check and the apply.
    fn commit(&self, writer: &mut EventLog, event: Event) -> Result<()> {
        self.state.read().check(&event).map_err(ServiceError::Validation)?;
        writer.append(&LogEntry {
            ts: (self.clock)(),
            event: event.clone(),
        })?;
        self.state
            .write()
            .apply(&event)
            .expect("checked under the writer lock");
        Ok(())
    }

    fn config_locked(&self) -> ServiceConfig {
        self.state
            .read()
            .config
            .clone()
            .expect("configured at open")
    }

    pub fn config(&self) -> ServiceConfig {
        self.config_locked()
    }

    pub fn log_path(&self) -> PathBuf {
        self.writer.lock().path().to_path_buf()
    }

    /// Scores `text` and routes it: `u ≤ threshold` is accepted automatically,
    /// anything else waits for a moderator. The item is on disk before this
    /// returns.
    pub fn classify(&self, text: &str) -> Result<ModerationItem> {
        if text.trim().is_empty() {
            return Err(ServiceError::Validation("text must not be empty".into()));
        }
        let scorer = self.scorer.as_ref().ok_or(ServiceError::ModelUnavailable)?;
        let mut writer = self.writer.lock();
        let (item_id, config) = {
            let state = self.state.read();
            (state.next_item_id(), state.config.clone().expect("configured at open"))
        };
        let scored = scorer.score(item_id, text, &config)?;
        let auto = config.threshold.accepts(scored.uncertainty.value);
        let item = ModerationItem {
            item_id,
            text: text.to_owned(),
            predicted_label: scored.label,
            class_probabilities: scored.probabilities,
            uncertainty: scored.uncertainty,
            status: if auto { ItemStatus::Auto } else { ItemStatus::Pending },
            final_label: auto.then_some(scored.label),
            moderator_id: None,
            received_ms: (self.clock)(),
            resolved_ms: None,
        };
        self.commit(&mut writer, Event::ItemClassified(item.clone()))?;
        Ok(item)
    }

    /// Resolves a pending item with the moderator's label, which is final
    /// even when it contradicts the prediction.
    pub fn submit_decision(&self, item_id: u64, label: usize, moderator_id: &str) -> Result<ModerationItem> {
        if moderator_id.trim().is_empty() {
            return Err(ServiceError::Validation("moderator_id must not be empty".into()));
        }
        let mut writer = self.writer.lock();
        {
            let state = self.state.read();
            let item = state.items.get(&item_id).ok_or(ServiceError::NotFound(item_id))?;
            if item.status != ItemStatus::Pending {
                return Err(ServiceError::Conflict(item_id));
            }
            let classes = state.config.as_ref().map_or(0, |c| c.class_names.len());
            if label >= classes {
                return Err(ServiceError::Validation(format!(
                    "label {label} out of range for {classes} classes"
                )));
            }
        }
        let decision = Decision {
            item_id,
            label,
            moderator_id: moderator_id.to_owned(),
            resolved_ms: (self.clock)(),
        };
        self.commit(&mut writer, Event::DecisionSubmitted(decision))?;
        Ok(self.state.read().items[&item_id].clone())
    }

    /// Applies to items classified from now on; routed items keep their status.
    pub fn set_threshold(&self, threshold: Threshold) -> Result<ServiceConfig> {
        let mut writer = self.writer.lock();
        let mut config = self.config_locked();
        if config.threshold != threshold {
            config.threshold = threshold;
            self.commit(&mut writer, Event::ConfigSet(config.clone()))?;
        }
        Ok(config)
    }

    pub fn list_queue(&self, filter: StatusFilter, limit: Option<usize>, offset: usize) -> Vec<ModerationItem> {
        self.state.read().queue(filter, limit, offset)
    }

    pub fn item(&self, item_id: u64) -> Option<ModerationItem> {
        self.state.read().items.get(&item_id).cloned()
    }

    pub fn stats(&self) -> ServiceStats {
        self.state.read().stats().expect("configured at open")
    }

    pub fn snapshot(&self) -> ServiceState {
        self.state.read().clone()
    }

    pub fn export_jsonl(&self) -> String {
        self.state.read().decisions_jsonl()
    }

    /// Writes every item with a final label to `path` as JSONL, ordered by
    /// item id. The file is written beside `path` and renamed into place, so
    /// a failure leaves no partial file.
    pub fn export_decisions(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let (body, count) = {
            let state = self.state.read();
            let count = state.items.values().filter(|i| i.final_label.is_some()).count();
            (state.decisions_jsonl(), count)
        };
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".partial");
        let tmp = path.with_file_name(tmp_name);
        let written = fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(body.as_bytes()).and_then(|()| f.sync_all()))
            .and_then(|()| fs::rename(&tmp, path));
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            return Err(ServiceError::storage(path, e));
        }
        Ok(count)
    }
}
