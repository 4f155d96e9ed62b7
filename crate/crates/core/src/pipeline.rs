//! Glue between the stages: features for a split, then scored evaluation records.

use serde::{Deserialize, Serialize};

use crate::classifiers::{derive_seed, predict_samples, TrainedModel};
use crate::corpus::{build_vocabulary, Dataset, VectorizedDataset, Vocabulary};
use crate::evaluation::EvaluationRecord;
use crate::uncertainty::{score, InferenceMode, ScoreFunction};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub max_vocab: usize,
    pub min_df: usize,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            max_vocab: 20_000,
            min_df: 2,
        }
    }
}

/// Vocabulary fitted on the training part and every part in feature space.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub vocabulary: Vocabulary,
    pub train: VectorizedDataset,
    pub test: VectorizedDataset,
    pub eval: VectorizedDataset,
}

pub fn prepare_split(
    train: &Dataset,
    test: &Dataset,
    eval: &Dataset,
    features: FeatureSettings,
) -> Result<PreparedSplit> {
    let vocabulary = build_vocabulary(train, features.max_vocab, features.min_df)?;
    Ok(PreparedSplit {
        train: VectorizedDataset::from_dataset(train, &vocabulary),
        test: VectorizedDataset::from_dataset(test, &vocabulary),
        eval: VectorizedDataset::from_dataset(eval, &vocabulary),
        vocabulary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub mode: InferenceMode,
    /// Stochastic forward passes for `mcd` and `bbb`.
    pub passes: usize,
    pub seed: u64,
}

/// Scores every record once per score function, reusing one set of
/// predictive samples per record. Record `i` samples with
/// `derive_seed(seed, id_i)`, so results do not depend on record order.
pub fn score_dataset(
    model: &TrainedModel,
    data: &VectorizedDataset,
    settings: InferenceSettings,
    functions: &[ScoreFunction],
) -> Result<Vec<Vec<EvaluationRecord>>> {
    let mut out = vec![Vec::with_capacity(data.len()); functions.len()];
    for ((x, &label), &id) in data.features.iter().zip(&data.labels).zip(&data.ids) {
        let samples = predict_samples(model, x, settings.mode, settings.passes, derive_seed(settings.seed, id))?;
        for (records, &function) in out.iter_mut().zip(functions) {
            let s = score(&samples, function)?;
            records.push(EvaluationRecord {
                doc_id: id,
                true_label: label,
                predicted_label: s.label,
                confidence: s.confidence,
                uncertainty: s.uncertainty,
            });
        }
    }
    Ok(out)
}
