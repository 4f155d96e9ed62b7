//! One trial of an experiment: split, fit features, train, score the evaluation part.

use std::thread;

use modq_core::classifiers::{train, ModelBundle, ModelKind};
use modq_core::corpus::{load_dataset, split_dataset, Dataset, SplitSeeds};
use modq_core::evaluation::EvaluationRecord;
use modq_core::pipeline::{prepare_split, score_dataset, InferenceSettings};
use modq_core::uncertainty::ScoreFunction;

use crate::config::{ExperimentConfig, TrialSeeds};
use crate::error::Result;

pub struct TrialRun {
    pub seeds: TrialSeeds,
    pub bundle: ModelBundle,
    /// Evaluation records per configured score function, in config order.
    pub records: Vec<(ScoreFunction, Vec<EvaluationRecord>)>,
}

impl TrialRun {
    pub fn records_for(&self, function: ScoreFunction) -> Option<&[EvaluationRecord]> {
        self.records
            .iter()
            .find(|(f, _)| *f == function)
            .map(|(_, r)| r.as_slice())
    }
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(load_dataset(&cfg.dataset.path, cfg.dataset.format)?)
}

/// Trains the trial's model and, when `score` is set, scores the evaluation
/// part with every configured function.
pub fn run_trial(cfg: &ExperimentConfig, corpus: &Dataset, trial: usize, score: bool) -> Result<TrialRun> {
    let seeds = cfg.trial_seeds(trial);
    let (tr, te, ev) = split_dataset(
        corpus,
        cfg.split.ratios(),
        SplitSeeds {
            seed: seeds.split_seed,
            eval_seed: seeds.eval_seed,
        },
    )?;
    let split = prepare_split(&tr, &te, &ev, cfg.features)?;
    let mut train_cfg = cfg.model.train.clone();
    train_cfg.seed = seeds.train_seed;
    let model = train(
        ModelKind::from(cfg.model.kind),
        &split.train,
        &train_cfg,
        cfg.uncertainty.ensemble_size,
    )?;
    log::debug!("trial {trial}: trained {} on {} documents", model.kind(), split.train.len());

    let records = if score {
        let settings = InferenceSettings {
            mode: cfg.uncertainty.mode,
            passes: cfg.uncertainty.passes,
            seed: seeds.inference_seed,
        };
        let scored = score_dataset(&model, &split.eval, settings, &cfg.score_functions)?;
        cfg.score_functions.iter().copied().zip(scored).collect()
    } else {
        Vec::new()
    };
    let bundle = ModelBundle::new(corpus.class_names().to_vec(), train_cfg, split.vocabulary, model)?;
    Ok(TrialRun { seeds, bundle, records })
}

/// Runs every trial, several at a time, and returns them in trial order.
pub fn run_trials(cfg: &ExperimentConfig, corpus: &Dataset, score: bool) -> Result<Vec<TrialRun>> {
    let jobs = thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.trials);
    let mut runs = Vec::with_capacity(cfg.trials);
    let trials: Vec<usize> = (0..cfg.trials).collect();
    for chunk in trials.chunks(jobs) {
        let results: Vec<Result<TrialRun>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&t| s.spawn(move || run_trial(cfg, corpus, t, score)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trial thread panicked"))
                .collect()
        });
        for r in results {
            runs.push(r?);
        }
    }
    Ok(runs)
}
