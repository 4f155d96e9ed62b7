use std::path::Path;

use modq_core::classifiers::{derive_seed, load_bundle, predict_samples, ModelBundle};
use modq_core::corpus::vectorize;
use modq_core::uncertainty::{score, Scored};

use crate::error::Result;
use crate::types::ServiceConfig;

/// Turns text into a prediction with an uncertainty score.
pub trait Scorer: Send + Sync {
    /// `item_id` seeds any stochastic inference, so a given item always
    /// scores the same.
    fn score(&self, item_id: u64, text: &str, config: &ServiceConfig) -> Result<Scored>;

    fn num_classes(&self) -> usize;
}

/// Scores with a trained model bundle.
pub struct ModelScorer {
    bundle: ModelBundle,
}

impl ModelScorer {
    pub fn new(bundle: ModelBundle) -> Self {
        Self { bundle }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(load_bundle(path)?))
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }
}

impl Scorer for ModelScorer {
    fn score(&self, item_id: u64, text: &str, config: &ServiceConfig) -> Result<Scored> {
        let x = vectorize(text, &self.bundle.vocabulary);
        let samples = predict_samples(
            &self.bundle.model,
            &x,
            config.mode,
            config.passes,
            derive_seed(config.seed, item_id),
        )?;
        Ok(score(&samples, config.score_function)?)
    }

    fn num_classes(&self) -> usize {
        self.bundle.class_names.len()
    }
}
