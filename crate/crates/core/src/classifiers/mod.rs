//! Small uncertainty-aware classifiers over sparse features.
//!
//! Three model families share one architecture (input → ReLU hidden layer →
//! softmax) and all report class-probability samples through
//! [`predict_samples`]:
//!
//! - [`MlpModel`] trained with dropout before each weight layer; serves the
//!   deterministic baseline and Monte Carlo dropout.
//! - [`BbbModel`] with a diagonal Gaussian over every weight, trained by
//!   Bayes by Backprop.
//! - [`EnsembleModel`] of independently initialised MLPs.

mod bbb;
mod ensemble;
mod mlp;
pub mod network;
mod persist;

pub use bbb::{train_bbb, BbbModel, ElboGradient};
pub use ensemble::{train_ensemble, EnsembleModel};
pub use mlp::{train_mlp, train_mlp_logged, MlpModel, TrainingLog};
pub use persist::{load_bundle, save_bundle, ModelBundle, FORMAT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureVector, VectorizedDataset};
use crate::uncertainty::{InferenceMode, PredictiveSamples};
use crate::{Error, Result};

/// Stochastic forward passes for MC dropout and BBB.
pub const DEFAULT_PASSES: usize = 50;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
    /// KL scaling per mini-batch; `None` means `1 / num_batches`.
    pub kl_weight: Option<f64>,
    pub prior_std: f64,
    pub samples_per_step: usize,
    /// Initial posterior standard deviation of every BBB weight.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden_size: 128,
            dropout_rate: 0.4,
            l2_penalty: 1e-5,
            seed: 0,
            kl_weight: None,
            prior_std: 1.0,
            samples_per_step: 1,
            init_std: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(self.epochs >= 1, "epochs must be at least 1")?;
        check(self.batch_size >= 1, "batch_size must be at least 1")?;
        check(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be positive",
        )?;
        check((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)")?;
        check(self.hidden_size >= 1, "hidden_size must be at least 1")?;
        check((0.0..1.0).contains(&self.dropout_rate), "dropout_rate must be in [0, 1)")?;
        check(
            self.l2_penalty.is_finite() && self.l2_penalty >= 0.0,
            "l2_penalty must be non-negative",
        )?;
        check(
            self.kl_weight.is_none_or(|w| w.is_finite() && w >= 0.0),
            "kl_weight must be non-negative",
        )?;
        check(
            self.prior_std.is_finite() && self.prior_std > 0.0,
            "prior_std must be positive",
        )?;
        check(self.samples_per_step >= 1, "samples_per_step must be at least 1")?;
        check(
            self.init_std.is_finite() && self.init_std > 0.0,
            "init_std must be positive",
        )
    }

    pub fn num_batches(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size).max(1)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    Ok(network::softmax_unchecked(logits))
}

/// `KL(N(mu, sigma²) ‖ N(0, prior_sigma²))`.
pub fn gaussian_kl(mu: f64, sigma: f64, prior_sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && prior_sigma > 0.0) || !sigma.is_finite() || !prior_sigma.is_finite() {
        return Err(Error::invalid("gaussian_kl needs positive standard deviations"));
    }
    if !mu.is_finite() {
        return Err(Error::NonFinite("gaussian_kl mean"));
    }
    let kl = (sigma * sigma + mu * mu) / (2.0 * prior_sigma * prior_sigma) - 0.5
        + (prior_sigma / sigma).ln();
    Ok(kl.max(0.0))
}

/// Mixes a base seed with a stream index (SplitMix64 finaliser), giving
/// independent RNG streams per item or member.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Mlp(MlpModel),
    Bbb(BbbModel),
    Ensemble(EnsembleModel),
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Mlp(_) => "mlp",
            TrainedModel::Bbb(_) => "bbb",
            TrainedModel::Ensemble(_) => "ensemble",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Mlp(m) => m.input_dim(),
            TrainedModel::Bbb(m) => m.input_dim(),
            TrainedModel::Ensemble(m) => m.members()[0].input_dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TrainedModel::Mlp(m) => m.num_classes(),
            TrainedModel::Bbb(m) => m.num_classes(),
            TrainedModel::Ensemble(m) => m.members()[0].num_classes(),
        }
    }
}

/// Which model family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Bbb,
    Ensemble,
}

impl ModelKind {
    /// Model family required by an inference mode.
    pub fn for_mode(mode: InferenceMode) -> Self {
        match mode {
            InferenceMode::Baseline | InferenceMode::Mcd => ModelKind::Mlp,
            InferenceMode::Bbb => ModelKind::Bbb,
            InferenceMode::Ensemble => ModelKind::Ensemble,
        }
    }
}

pub fn train(
    kind: ModelKind,
    data: &VectorizedDataset,
    cfg: &TrainConfig,
    ensemble_size: usize,
) -> Result<TrainedModel> {
    Ok(match kind {
        ModelKind::Mlp => TrainedModel::Mlp(train_mlp(data, cfg)?),
        ModelKind::Bbb => TrainedModel::Bbb(train_bbb(data, cfg)?),
        ModelKind::Ensemble => TrainedModel::Ensemble(train_ensemble(data, cfg, ensemble_size)?),
    })
}

/// Draws class-probability samples for one input.
///
/// `passes` applies to `mcd` and `bbb`; `baseline` always yields one row and
/// `ensemble` one row per member.
pub fn predict_samples(
    model: &TrainedModel,
    x: &FeatureVector,
    mode: InferenceMode,
    passes: usize,
    seed: u64,
) -> Result<PredictiveSamples> {
    if x.dim() != model.input_dim() {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match model input {}",
            x.dim(),
            model.input_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = match (mode, model) {
        (InferenceMode::Baseline, TrainedModel::Mlp(m)) => vec![m.predict_proba(x)],
        (InferenceMode::Mcd, TrainedModel::Mlp(m)) => {
            require_passes(passes)?;
            (0..passes)
                .map(|_| m.predict_proba_dropout(x, &mut rng))
                .collect()
        }
        (InferenceMode::Bbb, TrainedModel::Bbb(m)) => {
            require_passes(passes)?;
            (0..passes)
                .map(|_| m.predict_proba_sampled(x, &mut rng))
                .collect()
        }
        (InferenceMode::Ensemble, TrainedModel::Ensemble(m)) => m.member_probas(x),
        (mode, model) => {
            return Err(Error::IncompatibleMode {
                model: model.kind(),
                mode: mode.to_string(),
            })
        }
    };
    PredictiveSamples::new(rows, mode)
}

fn require_passes(passes: usize) -> Result<()> {
    if passes == 0 {
        Err(Error::invalid("number of forward passes must be at least 1"))
    } else {
        Ok(())
    }
}

/// Heavy-ball SGD, `v ← μ v − η g; θ ← θ + v`.
pub(crate) struct Momentum {
    velocity: Vec<f64>,
    learning_rate: f64,
    momentum: f64,
}

impl Momentum {
    pub(crate) fn new(len: usize, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: vec![0.0; len],
            learning_rate,
            momentum,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v - self.learning_rate * g;
            *p += *v;
        }
    }
}

pub(crate) fn check_training_set(data: &VectorizedDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if data.dim == 0 {
        return Err(Error::invalid("zero-dimension features"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn gaussian_kl_examples() {
        assert_eq!(gaussian_kl(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_kl(1.0, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            gaussian_kl(0.0, 0.5, 1.0).unwrap(),
            0.125 - 0.5 + 2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(gaussian_kl(0.0, 0.5, 1.0).unwrap(), 0.3181, epsilon = 1e-4);
        assert!(gaussian_kl(0.0, 0.0, 1.0).is_err());
        assert!(gaussian_kl(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn derive_seed_spreads_streams() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, 0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            dropout_rate: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_distribution(logits in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&logits).unwrap();
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn gaussian_kl_non_negative(mu in -5.0f64..5.0, s in 1e-3f64..5.0, sp in 1e-3f64..5.0) {
            let kl = gaussian_kl(mu, s, sp).unwrap();
            prop_assert!(kl >= 0.0);
            if mu.abs() > 1e-3 || (s - sp).abs() > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
