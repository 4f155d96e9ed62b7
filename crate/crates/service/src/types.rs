use std::fmt;
use std::str::FromStr;

use modq_core::moderation::Threshold;
use modq_core::uncertainty::{InferenceMode, ScoreFunction, UncertaintyScore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// Routing parameters of a running service. Model weights are referenced by
/// path, never embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub threshold: Threshold,
    pub score_function: ScoreFunction,
    pub mode: InferenceMode,
    /// Forward passes per item for `mcd` and `bbb`.
    pub passes: usize,
    pub model: String,
    pub class_names: Vec<String>,
    /// Base seed for per-item sampling.
    #[serde(default)]
    pub seed: u64,
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(ServiceError::Validation("passes must be at least 1".into()));
        }
        if self.class_names.len() < 2 {
            return Err(ServiceError::Validation("need at least two class names".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Auto,
    Pending,
    Resolved,
}

impl fmt::Display for ItemStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ItemStatus::Auto => "auto",
            ItemStatus::Pending => "pending",
            ItemStatus::Resolved => "resolved",
        })
    }
}

/// Queue filter; `All` lists every item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatusFilter {
    #[default]
    Pending,
    Auto,
    Resolved,
    All,
}

impl StatusFilter {
    pub fn matches(self, status: ItemStatus) -> bool {
        match self {
            StatusFilter::All => true,
            StatusFilter::Pending => status == ItemStatus::Pending,
            StatusFilter::Auto => status == ItemStatus::Auto,
            StatusFilter::Resolved => status == ItemStatus::Resolved,
        }
    }
}

impl FromStr for StatusFilter {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(StatusFilter::Pending),
            "auto" => Ok(StatusFilter::Auto),
            "resolved" => Ok(StatusFilter::Resolved),
            "all" => Ok(StatusFilter::All),
            other => Err(ServiceError::Validation(format!(
                "unknown status `{other}` (expected pending, auto, resolved or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationItem {
    pub item_id: u64,
    pub text: String,
    pub predicted_label: usize,
    pub class_probabilities: Vec<f64>,
    pub uncertainty: UncertaintyScore,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moderator_id: Option<String>,
    pub received_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_ms: Option<u64>,
}

impl ModerationItem {
    /// Checks the status/label/moderator invariants.
    pub fn is_consistent(&self) -> bool {
        match self.status {
            ItemStatus::Auto => {
                self.final_label == Some(self.predicted_label) && self.moderator_id.is_none()
            }
            ItemStatus::Pending => self.final_label.is_none() && self.moderator_id.is_none(),
            ItemStatus::Resolved => self.final_label.is_some() && self.moderator_id.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStats {
    pub total: usize,
    pub auto_count: usize,
    pub pending_count: usize,
    pub resolved_count: usize,
    /// `(pending + resolved) / total`, 0 when there are no items.
    pub moderation_load: f64,
    pub threshold: Threshold,
}
