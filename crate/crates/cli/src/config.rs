//! Experiment configuration: one JSON file, optionally overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use modq_core::classifiers::{ModelKind, TrainConfig, DEFAULT_ENSEMBLE_SIZE, DEFAULT_PASSES};
use modq_core::corpus::{DatasetFormat, SplitRatios};
use modq_core::moderation::{ReportOptions, DEFAULT_DEGREE, DEFAULT_GRID_STEP, DEFAULT_MIN_KNEE_HEIGHT};
use modq_core::pipeline::FeatureSettings;
use modq_core::uncertainty::{InferenceMode, ScoreFunction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: DatasetFormat,
}

fn default_format() -> DatasetFormat {
    DatasetFormat::Jsonl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// `[train, test, eval]` fractions.
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    /// Base seed for the train/test shuffle; trial `i` uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    /// Fixes the evaluation part across all trials.
    #[serde(default)]
    pub eval_seed: u64,
}

fn default_ratios() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl SplitConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios::new(self.ratios[0], self.ratios[1], self.ratios[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindConfig {
    Mlp,
    Bbb,
    Ensemble,
}

impl ModelKindConfig {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKindConfig::Mlp => "mlp",
            ModelKindConfig::Bbb => "bbb",
            ModelKindConfig::Ensemble => "ensemble",
        }
    }
}

impl From<ModelKindConfig> for ModelKind {
    fn from(k: ModelKindConfig) -> Self {
        match k {
            ModelKindConfig::Mlp => ModelKind::Mlp,
            ModelKindConfig::Bbb => ModelKind::Bbb,
            ModelKindConfig::Ensemble => ModelKind::Ensemble,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindConfig,
    /// Base training seed comes from `train.seed`; trial `i` adds `i`.
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub mode: InferenceMode,
    /// Stochastic forward passes (T) for `mcd` and `bbb`.
    #[serde(default = "default_passes")]
    pub passes: usize,
    /// Ensemble members (M).
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    /// Base seed for inference sampling; trial `i` adds `i`.
    #[serde(default)]
    pub seed: u64,
}

fn default_passes() -> usize {
    DEFAULT_PASSES
}

fn default_ensemble_size() -> usize {
    DEFAULT_ENSEMBLE_SIZE
}

fn default_trials() -> usize {
    5
}

fn default_score_functions() -> Vec<ScoreFunction> {
    ScoreFunction::ALL.to_vec()
}

fn default_grid_step() -> f64 {
    DEFAULT_GRID_STEP
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

fn default_min_knee_height() -> f64 {
    DEFAULT_MIN_KNEE_HEIGHT
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_split")]
    pub split: SplitConfig,
    #[serde(default)]
    pub features: FeatureSettings,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub model: ModelConfig,
    pub uncertainty: UncertaintyConfig,
    #[serde(default = "default_score_functions")]
    pub score_functions: Vec<ScoreFunction>,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_min_knee_height")]
    pub min_knee_height: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_split() -> SplitConfig {
    SplitConfig {
        ratios: default_ratios(),
        seed: 0,
        eval_seed: 0,
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub trials: Option<usize>,
    pub grid_step: Option<f64>,
    pub degree: Option<usize>,
}

impl Overrides {
    /// Rejects bad flag values before any file is read.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(g) = self.grid_step {
            if !(g > 0.0 && g <= 0.1) {
                return Err(CliError::config("grid_step", format!("must be in (0, 0.1], got {g}")));
            }
        }
        if self.trials == Some(0) {
            return Err(CliError::config("trials", "must be at least 1"));
        }
        if self.degree == Some(0) {
            return Err(CliError::config("degree", "must be at least 1"));
        }
        Ok(())
    }
}

/// Seeds used by one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub trial: usize,
    pub split_seed: u64,
    pub eval_seed: u64,
    pub train_seed: u64,
    pub inference_seed: u64,
}

impl ExperimentConfig {
    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            grid_step: self.grid_step,
            degree: self.degree,
            min_knee_height: self.min_knee_height,
        }
    }

    pub fn trial_seeds(&self, trial: usize) -> TrialSeeds {
        let i = trial as u64;
        TrialSeeds {
            trial,
            split_seed: self.split.seed.wrapping_add(i),
            eval_seed: self.split.eval_seed,
            train_seed: self.model.train.seed.wrapping_add(i),
            inference_seed: self.uncertainty.seed.wrapping_add(i),
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(t) = overrides.trials {
            self.trials = t;
        }
        if let Some(g) = overrides.grid_step {
            self.grid_step = g;
        }
        if let Some(d) = overrides.degree {
            self.degree = d;
        }
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<(), CliError> {
        let field = |path: &str, ok: bool, msg: String| {
            if ok {
                Ok(())
            } else {
                Err(CliError::config(path, msg))
            }
        };
        field(
            "dataset.path",
            self.dataset.path.is_file(),
            format!("no such file: {}", self.dataset.path.display()),
        )?;
        self.split
            .ratios()
            .validate()
            .map_err(|e| CliError::config("split.ratios", e.to_string()))?;
        field("trials", self.trials >= 1, "must be at least 1".into())?;
        self.model
            .train
            .validate()
            .map_err(|e| CliError::config("model.train", e.to_string()))?;
        let expected = ModelKind::for_mode(self.uncertainty.mode);
        field(
            "uncertainty.mode",
            ModelKind::from(self.model.kind) == expected,
            format!(
                "mode `{}` cannot run on a `{}` model",
                self.uncertainty.mode,
                self.model.kind.as_str()
            ),
        )?;
        field("uncertainty.passes", self.uncertainty.passes >= 1, "must be at least 1".into())?;
        field(
            "uncertainty.ensemble_size",
            self.model.kind != ModelKindConfig::Ensemble || self.uncertainty.ensemble_size >= 2,
            "an ensemble needs at least 2 members".into(),
        )?;
        field("score_functions", !self.score_functions.is_empty(), "must not be empty".into())?;
        field(
            "grid_step",
            self.grid_step > 0.0 && self.grid_step <= 0.1,
            format!("must be in (0, 0.1], got {}", self.grid_step),
        )?;
        field("degree", self.degree >= 1, "must be at least 1".into())?;
        field(
            "min_knee_height",
            self.min_knee_height.is_finite() && self.min_knee_height >= 0.0,
            "must be a non-negative number".into(),
        )?;
        field(
            "features.max_vocab",
            self.features.max_vocab >= 1 && self.features.min_df >= 1,
            "max_vocab and min_df must be at least 1".into(),
        )
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a config (or a run manifest, whose `config` field is used) with
/// errors that name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::config("<root>", e.to_string()))?;
    let (value, prefix) = match value.get("config") {
        Some(inner) if value.get("config_sha256").is_some() => (inner.clone(), "config."),
        _ => (value, ""),
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "<root>".to_owned() } else { format!("{prefix}{path}") };
        CliError::config(path, e.into_inner().to_string())
    })
}

/// Loads, resolves relative dataset and output paths against the config's
/// directory, applies `MODQ_OUT` and then `overrides`, and validates.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    overrides.validate()?;
    let text = fs::read_to_string(path).map_err(|e| CliError::config("<file>", format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if cfg.dataset.path.is_relative() {
        cfg.dataset.path = base.join(&cfg.dataset.path);
    }
    if let Ok(p) = cfg.dataset.path.canonicalize() {
        cfg.dataset.path = p;
    }
    if cfg.output_dir.is_relative() {
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    if let Some(out) = std::env::var_os("MODQ_OUT").filter(|v| !v.is_empty()) {
        cfg.output_dir = PathBuf::from(out);
    }
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}
