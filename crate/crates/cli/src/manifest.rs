//! Run manifests: the resolved config, its hash and every trial's seeds.
//!
//! A manifest is itself a valid `--config` argument, so `modq <command> -c
//! out/manifest.json` repeats the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TrialSeeds};
use crate::error::Result;
use crate::output::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub trials: Vec<TrialSeeds>,
    /// Command-specific flags, e.g. the calibrated score function.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, trials: Vec<TrialSeeds>) -> Self {
        Self {
            command: command.to_owned(),
            config: config.clone(),
            config_sha256: config.hash(),
            trials,
            args: BTreeMap::new(),
        }
    }

    pub fn with_arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn write(&self, output_dir: &Path) -> Result<PathBuf> {
        let path = output_dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}
