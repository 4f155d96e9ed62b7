use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{self, Dropout, LayerArrays, Shape};
use super::{check_training_set, Momentum, TrainConfig};
use crate::corpus::{FeatureVector, VectorizedDataset};
use crate::{Error, Result};

/// One-hidden-layer ReLU network trained with dropout before each weight layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct MlpModel {
    shape: Shape,
    params: Vec<f64>,
    dropout_rate: f64,
    l2_penalty: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    input_dim: usize,
    hidden_size: usize,
    num_classes: usize,
    dropout_rate: f64,
    l2_penalty: f64,
    seed: u64,
    layers: LayerArrays,
}

impl TryFrom<MlpRepr> for MlpModel {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        let shape = Shape::new(r.input_dim, r.hidden_size, r.num_classes)?;
        if !(0.0..1.0).contains(&r.dropout_rate) {
            return Err(Error::ModelFormat("dropout_rate must be in [0, 1)".into()));
        }
        Ok(Self {
            params: r.layers.into_flat(&shape)?,
            shape,
            dropout_rate: r.dropout_rate,
            l2_penalty: r.l2_penalty,
            seed: r.seed,
        })
    }
}

impl From<MlpModel> for MlpRepr {
    fn from(m: MlpModel) -> Self {
        MlpRepr {
            input_dim: m.shape.input,
            hidden_size: m.shape.hidden,
            num_classes: m.shape.classes,
            dropout_rate: m.dropout_rate,
            l2_penalty: m.l2_penalty,
            seed: m.seed,
            layers: LayerArrays::from_flat(&m.shape, &m.params),
        }
    }
}

/// Per-step and per-epoch training losses (regularisation included).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub batch_losses: Vec<Vec<f64>>,
}

impl TrainingLog {
    pub fn epoch_means(&self) -> Vec<f64> {
        self.batch_losses
            .iter()
            .map(|b| b.iter().sum::<f64>() / b.len() as f64)
            .collect()
    }
}

impl MlpModel {
    /// A freshly initialised (untrained) network.
    pub fn initialized(
        input_dim: usize,
        num_classes: usize,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let shape = Shape::new(input_dim, cfg.hidden_size, num_classes)?;
        Ok(Self {
            params: shape.init_params(rng),
            shape,
            dropout_rate: cfg.dropout_rate,
            l2_penalty: cfg.l2_penalty,
            seed: cfg.seed,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input
    }

    pub fn num_classes(&self) -> usize {
        self.shape.classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flat parameters, `w1 | b1 | w2 | b2`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout_rate must be in [0, 1)"));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    /// Deterministic prediction with dropout disabled.
    pub fn predict_proba(&self, x: &FeatureVector) -> Vec<f64> {
        network::forward::<ChaCha8Rng>(&self.shape, &self.params, x, None).probs
    }

    /// One stochastic pass with fresh dropout masks.
    pub fn predict_proba_dropout(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dropout = Dropout {
            rate: self.dropout_rate,
            rng,
        };
        network::forward(&self.shape, &self.params, x, Some(dropout)).probs
    }

    fn l2_term(&self) -> f64 {
        if self.l2_penalty == 0.0 {
            return 0.0;
        }
        let sq = |r: std::ops::Range<usize>| self.params[r].iter().map(|w| w * w).sum::<f64>();
        self.l2_penalty * (sq(self.shape.w1()) + sq(self.shape.w2()))
    }

    /// Mean cross-entropy over `batch` plus `λ Σ w²` over weights, and its
    /// gradient. Dropout masks are drawn from `rng` when given; reseeding the
    /// same RNG reproduces the masks.
    pub fn loss_and_grad(
        &self,
        data: &VectorizedDataset,
        batch: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut nll = 0.0;
        for &i in batch {
            let dropout = rng.as_deref_mut().map(|rng| Dropout {
                rate: self.dropout_rate,
                rng,
            });
            let pass = network::forward(&self.shape, &self.params, &data.features[i], dropout);
            nll += pass.nll(data.labels[i]);
            network::backward(&self.shape, &self.params, &pass, data.labels[i], scale, &mut grad);
        }
        if self.l2_penalty > 0.0 {
            for r in [self.shape.w1(), self.shape.w2()] {
                for (g, w) in grad[r.clone()].iter_mut().zip(&self.params[r]) {
                    *g += 2.0 * self.l2_penalty * w;
                }
            }
        }
        (nll * scale + self.l2_term(), grad)
    }

    pub fn loss(&self, data: &VectorizedDataset, batch: &[usize], rng: Option<&mut ChaCha8Rng>) -> f64 {
        self.loss_and_grad(data, batch, rng).0
    }
}

pub fn train_mlp(data: &VectorizedDataset, cfg: &TrainConfig) -> Result<MlpModel> {
    train_mlp_logged(data, cfg).map(|(m, _)| m)
}

/// Mini-batch momentum SGD on cross-entropy plus L2. One RNG stream seeded
/// from `cfg.seed` drives initialisation, shuffling and dropout masks.
pub fn train_mlp_logged(data: &VectorizedDataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainingLog)> {
    cfg.validate()?;
    check_training_set(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::initialized(data.dim, data.num_classes, cfg, &mut rng)?;
    let mut optimizer = Momentum::new(model.params.len(), cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(cfg.num_batches(data.len()));
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = model.loss_and_grad(data, batch, Some(&mut rng));
            if !loss.is_finite() {
                return Err(Error::invalid(format!(
                    "training diverged in epoch {epoch}; lower the learning rate"
                )));
            }
            optimizer.step(&mut model.params, &grad);
            losses.push(loss);
        }
        log.batch_losses.push(losses);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_set() -> VectorizedDataset {
        let points = [
            (vec![1.0, 0.0, 0.2], 0),
            (vec![0.9, 0.1, 0.0], 0),
            (vec![0.0, 1.0, 0.3], 1),
            (vec![0.1, 0.8, 0.0], 1),
        ];
        let features = points
            .iter()
            .map(|(x, _)| FeatureVector::from_dense(x).unwrap())
            .collect();
        VectorizedDataset::new(features, points.iter().map(|p| p.1).collect(), 2).unwrap()
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            learning_rate: 0.1,
            hidden_size: 8,
            dropout_rate: 0.0,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn accuracy(m: &MlpModel, d: &VectorizedDataset) -> f64 {
        let correct = d
            .features
            .iter()
            .zip(&d.labels)
            .filter(|(x, y)| crate::uncertainty::predicted_label(&m.predict_proba(x)) == **y)
            .count();
        correct as f64 / d.len() as f64
    }

    #[test]
    fn fits_separable_toy_set() {
        let d = toy_set();
        let m = train_mlp(&d, &toy_cfg()).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);

        let with_dropout = TrainConfig {
            dropout_rate: 0.4,
            ..toy_cfg()
        };
        let m = train_mlp(&d, &with_dropout).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);
    }

    #[test]
    fn training_is_bit_identical() {
        let d = toy_set();
        let cfg = TrainConfig {
            epochs: 20,
            dropout_rate: 0.4,
            ..toy_cfg()
        };
        let a = train_mlp(&d, &cfg).unwrap();
        let b = train_mlp(&d, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn loss_decreases_over_first_epoch() {
        let d = toy_set();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 0.05,
            ..toy_cfg()
        };
        let initial =
            MlpModel::initialized(3, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        let trained = train_mlp(&d, &cfg).unwrap();
        let all = [0, 1, 2, 3];
        let before = initial.loss(&d, &all, None);
        let after = trained.loss(&d, &all, None);
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn rejects_empty_and_zero_dimension() {
        let empty = VectorizedDataset::new(vec![], vec![], 2).unwrap();
        assert!(train_mlp(&empty, &toy_cfg()).is_err());
        let zero = VectorizedDataset::new(
            vec![FeatureVector::from_dense(&[]).unwrap()],
            vec![0],
            2,
        )
        .unwrap();
        let err = train_mlp(&zero, &toy_cfg()).unwrap_err();
        assert!(err.to_string().contains("zero-dimension"), "{err}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = toy_set();
        let cfg = TrainConfig {
            hidden_size: 4,
            l2_penalty: 1e-2,
            ..toy_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MlpModel::initialized(3, 2, &cfg, &mut rng).unwrap();
        assert!(m.params().len() <= 50);
        let batch = [0, 1, 2, 3];
        let (_, grad) = m.loss_and_grad(&d, &batch, None);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..m.params().len() {
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let up = m.loss(&d, &batch, None);
            m.params_mut()[i] = orig - h;
            let down = m.loss(&d, &batch, None);
            m.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((grad[i] - numeric).abs() / denom);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn serde_roundtrip() {
        let d = toy_set();
        let m = train_mlp(&d, &TrainConfig { epochs: 3, ..toy_cfg() }).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&json).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
