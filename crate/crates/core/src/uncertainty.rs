//! Predictive samples and uncertainty score functions.
//!
//! Every score is oriented so that larger values mean a less reliable
//! prediction, which lets a single threshold route items for all functions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// How predictive samples were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Single deterministic softmax pass.
    Baseline,
    /// Monte Carlo dropout: dropout kept active at inference.
    Mcd,
    /// Bayes by Backprop: fresh weight draw per pass.
    Bbb,
    /// One row per ensemble member.
    Ensemble,
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceMode::Baseline => "baseline",
            InferenceMode::Mcd => "mcd",
            InferenceMode::Bbb => "bbb",
            InferenceMode::Ensemble => "ensemble",
        })
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(InferenceMode::Baseline),
            "mcd" => Ok(InferenceMode::Mcd),
            "bbb" => Ok(InferenceMode::Bbb),
            "ensemble" => Ok(InferenceMode::Ensemble),
            other => Err(Error::invalid(format!("unknown inference mode `{other}`"))),
        }
    }
}

/// T × C matrix of class-probability rows for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSamples {
    rows: Vec<Vec<f64>>,
    mode: InferenceMode,
}

impl PredictiveSamples {
    pub fn new(rows: Vec<Vec<f64>>, mode: InferenceMode) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("predictive samples need at least one row"));
        };
        let classes = first.len();
        if classes == 0 {
            return Err(Error::invalid("predictive samples need at least one class"));
        }
        for row in &rows {
            if row.len() != classes {
                return Err(Error::invalid("ragged predictive sample rows"));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid("probabilities must be finite and non-negative"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("probability row sums to {sum}")));
            }
        }
        Ok(Self { rows, mode })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn mode(&self) -> InferenceMode {
        self.mode
    }

    pub fn num_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn num_classes(&self) -> usize {
        self.rows[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFunction {
    /// Least confidence, `1 - max p`.
    Lc,
    /// Smallest margin, `1 - (p1 - p2)`.
    Sm,
    /// Mutual information between prediction and model parameters.
    Mi,
}

impl ScoreFunction {
    pub const ALL: [ScoreFunction; 3] = [ScoreFunction::Lc, ScoreFunction::Sm, ScoreFunction::Mi];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreFunction::Lc => "lc",
            ScoreFunction::Sm => "sm",
            ScoreFunction::Mi => "mi",
        }
    }
}

impl fmt::Display for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lc" => Ok(ScoreFunction::Lc),
            "sm" => Ok(ScoreFunction::Sm),
            "mi" => Ok(ScoreFunction::Mi),
            other => Err(Error::invalid(format!("unknown score function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub value: f64,
    pub function: ScoreFunction,
}

/// Outcome of scoring one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub label: usize,
    pub confidence: f64,
    pub uncertainty: UncertaintyScore,
    pub probabilities: Vec<f64>,
}

/// Row-wise arithmetic mean of the samples.
pub fn mean_predictive(samples: &PredictiveSamples) -> Vec<f64> {
    let t = samples.num_samples() as f64;
    let mut mean = vec![0.0; samples.num_classes()];
    for row in samples.rows() {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    mean
}

/// Argmax with ties resolved to the lowest class index.
pub fn predicted_label(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

pub fn least_confidence(p: &[f64]) -> UncertaintyScore {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    UncertaintyScore {
        value: 1.0 - max,
        function: ScoreFunction::Lc,
    }
}

pub fn smallest_margin(p: &[f64]) -> Result<UncertaintyScore> {
    if p.len() < 2 {
        return Err(Error::invalid("smallest margin needs at least two classes"));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(UncertaintyScore {
        value: 1.0 - (first - second),
        function: ScoreFunction::Sm,
    })
}

/// Entropy of the mean prediction minus the mean per-pass entropy, clamped at 0.
pub fn mutual_information(samples: &PredictiveSamples) -> UncertaintyScore {
    let total = entropy(&mean_predictive(samples));
    let expected =
        samples.rows().iter().map(|r| entropy(r)).sum::<f64>() / samples.num_samples() as f64;
    UncertaintyScore {
        value: (total - expected).max(0.0),
        function: ScoreFunction::Mi,
    }
}

/// Predicted class, confidence (max mean probability) and uncertainty.
pub fn score(samples: &PredictiveSamples, function: ScoreFunction) -> Result<Scored> {
    let mean = mean_predictive(samples);
    let lc = least_confidence(&mean);
    let uncertainty = match function {
        ScoreFunction::Lc => lc,
        ScoreFunction::Sm => smallest_margin(&mean)?,
        ScoreFunction::Mi => mutual_information(samples),
    };
    Ok(Scored {
        label: predicted_label(&mean),
        confidence: 1.0 - lc.value,
        uncertainty,
        probabilities: mean,
    })
}
