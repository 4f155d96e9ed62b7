//! Forward and backward passes of the one-hidden-layer ReLU network shared by
//! the dropout MLP and the Bayes-by-Backprop MLP.
//!
//! Parameters live in one flat vector laid out as `w1 | b1 | w2 | b2`, with
//! `w1` stored input-major (`w1[i * hidden + j]`) so sparse inputs touch
//! contiguous rows.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Shape {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 {
            return Err(Error::invalid("zero-dimension features"));
        }
        if hidden == 0 {
            return Err(Error::invalid("hidden size must be positive"));
        }
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        Ok(Self {
            input,
            hidden,
            classes,
        })
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.input * self.hidden
    }

    pub fn b1(&self) -> Range<usize> {
        let start = self.w1().end;
        start..start + self.hidden
    }

    pub fn w2(&self) -> Range<usize> {
        let start = self.b1().end;
        start..start + self.hidden * self.classes
    }

    pub fn b2(&self) -> Range<usize> {
        let start = self.w2().end;
        start..start + self.classes
    }

    pub fn num_params(&self) -> usize {
        self.b2().end
    }

    /// Whether flat index `i` is a weight (as opposed to a bias).
    pub fn is_weight(&self, i: usize) -> bool {
        self.w1().contains(&i) || self.w2().contains(&i)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        let l1 = (6.0 / (self.input + self.hidden) as f64).sqrt();
        for w in &mut params[self.w1()] {
            *w = rng.random_range(-l1..l1);
        }
        let l2 = (6.0 / (self.hidden + self.classes) as f64).sqrt();
        for w in &mut params[self.w2()] {
            *w = rng.random_range(-l2..l2);
        }
        params
    }
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Pass {
    pub input: Vec<(usize, f64)>,
    pub pre: Vec<f64>,
    /// Dropout multiplier per hidden unit: 0, 1, or `1 / (1 - p)`.
    pub hidden_scale: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Pass {
    pub fn nll(&self, label: usize) -> f64 {
        log_sum_exp(&self.logits) - self.logits[label]
    }
}

/// Inverted dropout applied before each weight layer.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng> Dropout<'_, R> {
    fn keep_scale(&mut self) -> f64 {
        if self.rng.random::<f64>() < self.rate {
            0.0
        } else {
            1.0 / (1.0 - self.rate)
        }
    }
}

pub fn forward<R: Rng>(
    shape: &Shape,
    params: &[f64],
    x: &FeatureVector,
    mut dropout: Option<Dropout<'_, R>>,
) -> Pass {
    let h = shape.hidden;
    let active = dropout.as_ref().is_some_and(|d| d.rate > 0.0);

    let mut input: Vec<(usize, f64)> = x.iter().collect();
    if active {
        let d = dropout.as_mut().expect("active dropout");
        for (_, v) in input.iter_mut() {
            *v *= d.keep_scale();
        }
    }

    let mut pre = params[shape.b1()].to_vec();
    let w1 = &params[shape.w1()];
    for &(i, v) in &input {
        if v == 0.0 {
            continue;
        }
        let row = &w1[i * h..(i + 1) * h];
        for (p, w) in pre.iter_mut().zip(row) {
            *p += v * w;
        }
    }

    let hidden_scale: Vec<f64> = if active {
        let d = dropout.as_mut().expect("active dropout");
        (0..h).map(|_| d.keep_scale()).collect()
    } else {
        vec![1.0; h]
    };
    let hidden: Vec<f64> = pre
        .iter()
        .zip(&hidden_scale)
        .map(|(p, s)| p.max(0.0) * s)
        .collect();

    let c = shape.classes;
    let mut logits = params[shape.b2()].to_vec();
    let w2 = &params[shape.w2()];
    for (j, a) in hidden.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (l, w) in logits.iter_mut().zip(&w2[j * c..(j + 1) * c]) {
            *l += a * w;
        }
    }
    let probs = softmax_unchecked(&logits);
    Pass {
        input,
        pre,
        hidden_scale,
        hidden,
        logits,
        probs,
    }
}

/// Accumulates `scale * d nll / d params` into `grad`.
pub fn backward(shape: &Shape, params: &[f64], pass: &Pass, label: usize, scale: f64, grad: &mut [f64]) {
    let (h, c) = (shape.hidden, shape.classes);
    let dlogits: Vec<f64> = pass
        .probs
        .iter()
        .enumerate()
        .map(|(k, p)| (p - if k == label { 1.0 } else { 0.0 }) * scale)
        .collect();

    let b2 = shape.b2();
    for (g, d) in grad[b2].iter_mut().zip(&dlogits) {
        *g += d;
    }

    let w2_range = shape.w2();
    let w2 = &params[w2_range.clone()];
    let mut dpre = vec![0.0; h];
    {
        let gw2 = &mut grad[w2_range];
        for j in 0..h {
            let a = pass.hidden[j];
            let row = j * c..(j + 1) * c;
            if a != 0.0 {
                for (g, d) in gw2[row.clone()].iter_mut().zip(&dlogits) {
                    *g += a * d;
                }
            }
            if pass.pre[j] > 0.0 && pass.hidden_scale[j] != 0.0 {
                let dh: f64 = w2[row].iter().zip(&dlogits).map(|(w, d)| w * d).sum();
                dpre[j] = dh * pass.hidden_scale[j];
            }
        }
    }

    let b1 = shape.b1();
    for (g, d) in grad[b1].iter_mut().zip(&dpre) {
        *g += d;
    }
    let gw1 = &mut grad[shape.w1()];
    for &(i, v) in &pass.input {
        if v == 0.0 {
            continue;
        }
        for (g, d) in gw1[i * h..(i + 1) * h].iter_mut().zip(&dpre) {
            *g += v * d;
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Layer arrays in their serialised form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerArrays {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl LayerArrays {
    pub fn from_flat(shape: &Shape, params: &[f64]) -> Self {
        Self {
            w1: params[shape.w1()].to_vec(),
            b1: params[shape.b1()].to_vec(),
            w2: params[shape.w2()].to_vec(),
            b2: params[shape.b2()].to_vec(),
        }
    }

    pub fn into_flat(self, shape: &Shape) -> Result<Vec<f64>> {
        let expected = [
            ("w1", self.w1.len(), shape.w1().len()),
            ("b1", self.b1.len(), shape.b1().len()),
            ("w2", self.w2.len(), shape.w2().len()),
            ("b2", self.b2.len(), shape.b2().len()),
        ];
        for (name, got, want) in expected {
            if got != want {
                return Err(Error::ModelFormat(format!(
                    "layer {name} has {got} values, shape requires {want}"
                )));
            }
        }
        let mut flat = self.w1;
        flat.extend(self.b1);
        flat.extend(self.w2);
        flat.extend(self.b2);
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        Ok(flat)
    }
}
