#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use modq_core::moderation::Threshold;
use modq_core::uncertainty::{InferenceMode, ScoreFunction, Scored, UncertaintyScore};
use modq_service::{Clock, Result, Scorer, Service, ServiceConfig};

/// Reads the uncertainty straight from the text, e.g. `"0.3"` or `"0.3 anything"`,
/// so tests can hit the threshold exactly.
pub struct StubScorer;

impl Scorer for StubScorer {
    fn score(&self, _item_id: u64, text: &str, config: &ServiceConfig) -> Result<Scored> {
        let u: f64 = text
            .split_whitespace()
            .next()
            .and_then(|t| t.parse().ok())
            .unwrap_or(0.5);
        Ok(Scored {
            label: 1,
            confidence: 1.0 - u,
            uncertainty: UncertaintyScore {
                value: u,
                function: config.score_function,
            },
            probabilities: vec![0.25, 0.5, 0.25],
        })
    }

    fn num_classes(&self) -> usize {
        3
    }
}

pub fn config(threshold: f64) -> ServiceConfig {
    ServiceConfig {
        threshold: Threshold::new(threshold).unwrap(),
        score_function: ScoreFunction::Lc,
        mode: InferenceMode::Mcd,
        passes: 50,
        model: "stub".into(),
        class_names: vec!["a".into(), "b".into(), "c".into()],
        seed: 0,
    }
}

/// Deterministic clock ticking one millisecond per reading.
pub fn ticking_clock() -> Clock {
    let t = Arc::new(AtomicU64::new(1_700_000_000_000));
    Arc::new(move || t.fetch_add(1, Ordering::SeqCst))
}

pub fn open(path: &Path, threshold: f64) -> Service {
    Service::open_with_clock(path, Some(Arc::new(StubScorer)), Some(config(threshold)), ticking_clock())
        .unwrap()
}

pub fn reopen(path: &Path) -> Service {
    Service::open_with_clock(path, Some(Arc::new(StubScorer)), None, ticking_clock()).unwrap()
}
