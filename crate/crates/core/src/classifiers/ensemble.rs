use std::thread;

use serde::{Deserialize, Serialize};

use super::{train_mlp, MlpModel, TrainConfig};
use crate::corpus::{FeatureVector, VectorizedDataset};
use crate::{Error, Result};

/// Independently initialised and trained MLPs whose softmax outputs are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRepr", into = "EnsembleRepr")]
pub struct EnsembleModel {
    members: Vec<MlpModel>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRepr {
    members: Vec<MlpModel>,
}

impl TryFrom<EnsembleRepr> for EnsembleModel {
    type Error = Error;

    fn try_from(r: EnsembleRepr) -> Result<Self> {
        Self::new(r.members).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

impl From<EnsembleModel> for EnsembleRepr {
    fn from(m: EnsembleModel) -> Self {
        EnsembleRepr { members: m.members }
    }
}

impl EnsembleModel {
    pub fn new(members: Vec<MlpModel>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let shape = members[0].shape();
        if members.iter().any(|m| m.shape() != shape) {
            return Err(Error::invalid("ensemble members differ in architecture"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[MlpModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Deterministic softmax output of every member.
    pub fn member_probas(&self, x: &FeatureVector) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.predict_proba(x)).collect()
    }
}

/// Trains `size` members, member `i` with seed `cfg.seed + i`, one thread each.
pub fn train_ensemble(data: &VectorizedDataset, cfg: &TrainConfig, size: usize) -> Result<EnsembleModel> {
    if size < 2 {
        return Err(Error::invalid(format!("ensemble size must be at least 2, got {size}")));
    }
    cfg.validate()?;
    let members = thread::scope(|scope| {
        let handles: Vec<_> = (0..size)
            .map(|i| {
                let member_cfg = TrainConfig {
                    seed: cfg.seed.wrapping_add(i as u64),
                    ..cfg.clone()
                };
                scope.spawn(move || train_mlp(data, &member_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ensemble member training panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    EnsembleModel::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{predict_samples, TrainedModel};
    use crate::uncertainty::InferenceMode;

    fn toy_set() -> VectorizedDataset {
        let xs = [[1.0, 0.0], [0.8, 0.1], [0.0, 1.0], [0.2, 0.9]];
        let features = xs.iter().map(|x| FeatureVector::from_dense(x).unwrap()).collect();
        VectorizedDataset::new(features, vec![0, 0, 1, 1], 2).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch_size: 2,
            hidden_size: 4,
            seed: 100,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn members_differ_and_training_repeats() {
        let d = toy_set();
        let e = train_ensemble(&d, &cfg(), 5).unwrap();
        assert_eq!(e.len(), 5);
        for i in 0..5 {
            assert_eq!(e.members()[i].seed(), 100 + i as u64);
            for j in i + 1..5 {
                assert_ne!(e.members()[i].params(), e.members()[j].params());
            }
        }
        assert_eq!(e, train_ensemble(&d, &cfg(), 5).unwrap());
    }

    #[test]
    fn rejects_single_member() {
        assert!(train_ensemble(&toy_set(), &cfg(), 1).is_err());
    }

    #[test]
    fn one_sample_row_per_member() {
        let d = toy_set();
        let model = TrainedModel::Ensemble(train_ensemble(&d, &cfg(), 5).unwrap());
        let s = predict_samples(&model, &d.features[0], InferenceMode::Ensemble, 50, 0).unwrap();
        assert_eq!(s.num_samples(), 5);
    }
}
