use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::{self, LayerArrays, Shape};
use super::{check_training_set, Momentum, TrainConfig};
use crate::corpus::{FeatureVector, VectorizedDataset};
use crate::{Error, Result};

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Network with a factorised Gaussian `N(μ, σ²)` over every parameter,
/// `σ = ln(1 + e^ρ)`, and a zero-mean Gaussian prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BbbRepr", into = "BbbRepr")]
pub struct BbbModel {
    shape: Shape,
    mu: Vec<f64>,
    rho: Vec<f64>,
    prior_std: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BbbRepr {
    input_dim: usize,
    hidden_size: usize,
    num_classes: usize,
    prior_std: f64,
    seed: u64,
    mu: LayerArrays,
    rho: LayerArrays,
}

impl TryFrom<BbbRepr> for BbbModel {
    type Error = Error;

    fn try_from(r: BbbRepr) -> Result<Self> {
        let shape = Shape::new(r.input_dim, r.hidden_size, r.num_classes)?;
        if !(r.prior_std > 0.0) {
            return Err(Error::ModelFormat("prior_std must be positive".into()));
        }
        Ok(Self {
            mu: r.mu.into_flat(&shape)?,
            rho: r.rho.into_flat(&shape)?,
            shape,
            prior_std: r.prior_std,
            seed: r.seed,
        })
    }
}

impl From<BbbModel> for BbbRepr {
    fn from(m: BbbModel) -> Self {
        BbbRepr {
            input_dim: m.shape.input,
            hidden_size: m.shape.hidden,
            num_classes: m.shape.classes,
            prior_std: m.prior_std,
            seed: m.seed,
            mu: LayerArrays::from_flat(&m.shape, &m.mu),
            rho: LayerArrays::from_flat(&m.shape, &m.rho),
        }
    }
}

/// Loss and gradients of one ELBO evaluation.
#[derive(Debug, Clone)]
pub struct ElboGradient {
    pub loss: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

impl BbbModel {
    /// Posterior with the given means and one shared standard deviation.
    pub fn from_means(shape: Shape, mu: Vec<f64>, sigma: f64, prior_std: f64, seed: u64) -> Result<Self> {
        if mu.len() != shape.num_params() {
            return Err(Error::invalid("mean vector does not match the network shape"));
        }
        if !(sigma > 0.0 && prior_std > 0.0) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        let rho = vec![inverse_softplus(sigma); mu.len()];
        Ok(Self {
            shape,
            mu,
            rho,
            prior_std,
            seed,
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

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `Σ KL(q(w) ‖ p(w))` over all parameters.
    pub fn kl_divergence(&self) -> f64 {
        let sp2 = self.prior_std * self.prior_std;
        self.mu
            .iter()
            .zip(&self.rho)
            .map(|(&m, &r)| {
                let s = softplus(r);
                (s * s + m * m) / (2.0 * sp2) - 0.5 + (self.prior_std / s).ln()
            })
            .sum()
    }

    /// Forward pass at the posterior means.
    pub fn predict_proba_mean(&self, x: &FeatureVector) -> Vec<f64> {
        network::forward::<ChaCha8Rng>(&self.shape, &self.mu, x, None).probs
    }

    /// One forward pass with weights drawn from the posterior. Only the
    /// first-layer rows of non-zero features are sampled.
    pub fn predict_proba_sampled(&self, x: &FeatureVector, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let h = self.shape.hidden;
        let active: Vec<(usize, f64)> = x.iter().collect();
        let compact = Shape {
            input: active.len().max(1),
            ..self.shape
        };
        let mut params = vec![0.0; compact.num_params()];
        let mut draw = |dst: &mut [f64], src: std::ops::Range<usize>| {
            for (d, k) in dst.iter_mut().zip(src) {
                let eps: f64 = rng.sample(StandardNormal);
                *d = self.mu[k] + softplus(self.rho[k]) * eps;
            }
        };
        for (row, &(i, _)) in active.iter().enumerate() {
            let src = self.shape.w1().start + i * h;
            draw(&mut params[row * h..(row + 1) * h], src..src + h);
        }
        draw(&mut params[compact.b1()], self.shape.b1());
        draw(&mut params[compact.w2()], self.shape.w2());
        draw(&mut params[compact.b2()], self.shape.b2());

        let pairs = active.iter().enumerate().map(|(row, &(_, v))| (row, v)).collect();
        let x = FeatureVector::from_pairs(compact.input, pairs).expect("compact indices are valid");
        network::forward::<ChaCha8Rng>(&compact, &params, &x, None).probs
    }

    /// `(kl_weight · KL + Σ_batch NLL) / |batch|` at weights `μ + σ ⊙ ε`, with
    /// reparameterised gradients. Passing the same `epsilon` gives common
    /// random numbers across evaluations.
    pub fn elbo_loss_and_grad(
        &self,
        data: &VectorizedDataset,
        batch: &[usize],
        epsilon: &[f64],
        kl_weight: f64,
    ) -> ElboGradient {
        assert_eq!(epsilon.len(), self.mu.len(), "epsilon length must match parameters");
        let sigma = self.sigmas();
        let weights: Vec<f64> = self
            .mu
            .iter()
            .zip(&sigma)
            .zip(epsilon)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut grad_w = vec![0.0; weights.len()];
        let mut nll = 0.0;
        for &i in batch {
            let pass = network::forward::<ChaCha8Rng>(&self.shape, &weights, &data.features[i], None);
            nll += pass.nll(data.labels[i]);
            network::backward(&self.shape, &weights, &pass, data.labels[i], scale, &mut grad_w);
        }
        let kl_scale = kl_weight * scale;
        let sp2 = self.prior_std * self.prior_std;
        let mut grad_mu = grad_w.clone();
        let mut grad_rho = grad_w;
        for k in 0..self.mu.len() {
            let s = sigma[k];
            grad_mu[k] += kl_scale * self.mu[k] / sp2;
            grad_rho[k] = (grad_rho[k] * epsilon[k] + kl_scale * (s / sp2 - 1.0 / s)) * sigmoid(self.rho[k]);
        }
        ElboGradient {
            loss: kl_scale * self.kl_divergence() + nll * scale,
            grad_mu,
            grad_rho,
        }
    }

    pub fn sample_epsilon<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.mu.len()).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Bayes by Backprop with the reparameterisation trick and momentum SGD on
/// `(μ, ρ)`. `cfg.l2_penalty` and `cfg.dropout_rate` are not used; the prior
/// regularises.
pub fn train_bbb(data: &VectorizedDataset, cfg: &TrainConfig) -> Result<BbbModel> {
    cfg.validate()?;
    check_training_set(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = Shape::new(data.dim, cfg.hidden_size, data.num_classes)?;
    let mu = shape.init_params(&mut rng);
    let mut model = BbbModel::from_means(shape, mu, cfg.init_std, cfg.prior_std, cfg.seed)?;
    let kl_weight = cfg
        .kl_weight
        .unwrap_or_else(|| 1.0 / cfg.num_batches(data.len()) as f64);

    let n = model.mu.len();
    let mut opt_mu = Momentum::new(n, cfg.learning_rate, cfg.momentum);
    let mut opt_rho = Momentum::new(n, cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let samples = cfg.samples_per_step as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_mu = vec![0.0; n];
            let mut grad_rho = vec![0.0; n];
            let mut loss = 0.0;
            for _ in 0..cfg.samples_per_step {
                let eps = model.sample_epsilon(&mut rng);
                let g = model.elbo_loss_and_grad(data, batch, &eps, kl_weight);
                loss += g.loss / samples;
                grad_mu.iter_mut().zip(&g.grad_mu).for_each(|(a, b)| *a += b / samples);
                grad_rho.iter_mut().zip(&g.grad_rho).for_each(|(a, b)| *a += b / samples);
            }
            if !loss.is_finite() {
                return Err(Error::invalid(format!(
                    "training diverged in epoch {epoch}; lower the learning rate"
                )));
            }
            opt_mu.step(&mut model.mu, &grad_mu);
            opt_rho.step(&mut model.rho, &grad_rho);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{predict_samples, train_mlp, TrainedModel};
    use crate::uncertainty::{predicted_label, InferenceMode};

    fn toy_set() -> VectorizedDataset {
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

    fn ml_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            learning_rate: 0.1,
            hidden_size: 8,
            dropout_rate: 0.0,
            kl_weight: Some(0.0),
            init_std: 1e-6,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn softplus_roundtrip() {
        for s in [1e-12, 1e-3, 0.5, 3.0, 50.0] {
            assert!((softplus(inverse_softplus(s)) - s).abs() / s < 1e-9);
        }
    }

    #[test]
    fn kl_free_training_behaves_like_maximum_likelihood() {
        let d = toy_set();
        let bbb = train_bbb(&d, &ml_cfg()).unwrap();
        let mlp = train_mlp(&d, &ml_cfg()).unwrap();
        for (x, y) in d.features.iter().zip(&d.labels) {
            assert_eq!(predicted_label(&bbb.predict_proba_mean(x)), *y);
            assert_eq!(predicted_label(&mlp.predict_proba(x)), *y);
        }
        assert!(bbb.sigmas().iter().all(|s| *s > 0.0));
    }

    #[test]
    fn default_kl_weight_keeps_sigma_positive() {
        let d = toy_set();
        let cfg = TrainConfig {
            kl_weight: None,
            init_std: 0.05,
            epochs: 100,
            ..ml_cfg()
        };
        let a = train_bbb(&d, &cfg).unwrap();
        assert!(a.sigmas().iter().all(|s| *s > 0.0 && s.is_finite()));
        let b = train_bbb(&d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn param(m: &mut BbbModel, which: usize, k: usize) -> &mut f64 {
        if which == 0 {
            &mut m.mu_mut()[k]
        } else {
            &mut m.rho_mut()[k]
        }
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let d = toy_set();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = Shape::new(3, 3, 2).unwrap();
        let mu = shape.init_params(&mut rng);
        let mut m = BbbModel::from_means(shape, mu, 0.1, 1.0, 0).unwrap();
        for r in m.rho_mut().iter_mut() {
            *r += rng.random_range(-0.5..0.5);
        }
        assert!(m.mu().len() <= 20);
        let eps = m.sample_epsilon(&mut rng);
        let batch = [0, 1, 2, 3];
        let kl_weight = 0.3;
        let g = m.elbo_loss_and_grad(&d, &batch, &eps, kl_weight);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..m.mu().len() {
            for which in 0..2 {
                let orig = *param(&mut m, which, k);
                *param(&mut m, which, k) = orig + h;
                let up = m.elbo_loss_and_grad(&d, &batch, &eps, kl_weight).loss;
                *param(&mut m, which, k) = orig - h;
                let down = m.elbo_loss_and_grad(&d, &batch, &eps, kl_weight).loss;
                *param(&mut m, which, k) = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = if which == 0 { g.grad_mu[k] } else { g.grad_rho[k] };
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn vanishing_sigma_matches_mean_pass() {
        let d = toy_set();
        let trained = train_bbb(&d, &TrainConfig { epochs: 50, ..ml_cfg() }).unwrap();
        let m = BbbModel::from_means(trained.shape(), trained.mu().to_vec(), 1e-12, 1.0, 0).unwrap();
        let model = TrainedModel::Bbb(m.clone());
        for x in &d.features {
            let mean = m.predict_proba_mean(x);
            let s = predict_samples(&model, x, InferenceMode::Bbb, 10, 1).unwrap();
            for row in s.rows() {
                for (a, b) in row.iter().zip(&mean) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn serde_roundtrip() {
        let d = toy_set();
        let m = train_bbb(&d, &TrainConfig { epochs: 2, ..ml_cfg() }).unwrap();
        let back: BbbModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
