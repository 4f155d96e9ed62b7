//! Live moderation service.
//!
//! Incoming texts are scored; an item whose uncertainty is at most the
//! configured threshold keeps the model's label, anything more uncertain
//! waits in a queue for a human decision. Every state change is an event in
//! an append-only JSONL log, and the service state is always the replay of
//! that log.

mod engine;
mod error;
mod events;
pub mod http;
mod scorer;
mod types;

pub use crate::engine::{system_clock, Clock, Service};
pub use crate::error::{Result, ServiceError};
pub use crate::events::{replay_log, Decision, Event, EventLog, LogEntry, Replay, ServiceState};
pub use crate::scorer::{ModelScorer, Scorer};
pub use crate::types::{ItemStatus, ModerationItem, ServiceConfig, ServiceStats, StatusFilter};
