//! Uncertainty-aware text classification with saturation-based human moderation.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: dataset loading, reproducible splits, tokenisation and TF-IDF features.
//! - [`classifiers`]: a dropout MLP (baseline and Monte Carlo dropout), a Bayes-by-Backprop
//!   MLP and deep ensembles, all producing class-probability samples.
//! - [`uncertainty`]: aggregation of predictive samples and the least-confidence,
//!   smallest-margin and mutual-information score functions.
//! - [`evaluation`]: micro F1, misclassification AUC-ROC and confidence statistics.
//! - [`moderation`]: moderation curves, polynomial smoothing, saturation detection,
//!   threshold derivation and effort savings relative to random moderation.
//! - [`pipeline`]: feature preparation for a split and scoring of evaluation records.
//! - [`synthetic`]: a seeded generator for labelled corpora with controlled ambiguity.

pub mod classifiers;
pub mod corpus;
mod error;
pub mod evaluation;
pub mod moderation;
pub mod pipeline;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
