use std::sync::Arc;

use modq_core::classifiers::{save_bundle, train, ModelBundle, ModelKind, TrainConfig};
use modq_core::corpus::{split_dataset, SplitRatios, SplitSeeds};
use modq_core::moderation::Threshold;
use modq_core::pipeline::{prepare_split, FeatureSettings};
use modq_core::synthetic::{generate_corpus, SyntheticCorpusSpec};
use modq_core::uncertainty::{InferenceMode, ScoreFunction};
use modq_service::{ModelScorer, Scorer, Service, ServiceConfig};

fn bundle() -> ModelBundle {
    let corpus = generate_corpus(&SyntheticCorpusSpec {
        num_docs: 200,
        ..Default::default()
    })
    .unwrap();
    let (tr, te, ev) = split_dataset(
        &corpus,
        SplitRatios::new(0.6, 0.2, 0.2),
        SplitSeeds { seed: 0, eval_seed: 1 },
    )
    .unwrap();
    let split = prepare_split(&tr, &te, &ev, FeatureSettings::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        hidden_size: 16,
        ..Default::default()
    };
    let model = train(ModelKind::Mlp, &split.train, &cfg, 0).unwrap();
    ModelBundle::new(corpus.class_names().to_vec(), cfg, split.vocabulary, model).unwrap()
}

fn config(mode: InferenceMode, threshold: f64) -> ServiceConfig {
    ServiceConfig {
        threshold: Threshold::new(threshold).unwrap(),
        score_function: ScoreFunction::Mi,
        mode,
        passes: 20,
        model: "model.json".into(),
        class_names: (0..4).map(|c| format!("topic_{c}")).collect(),
        seed: 3,
    }
}

#[test]
fn model_scorer_is_deterministic_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_bundle(&bundle(), &path).unwrap();
    let scorer = ModelScorer::load(&path).unwrap();
    assert_eq!(scorer.num_classes(), 4);

    let cfg = config(InferenceMode::Mcd, 0.1);
    let text = scorer.bundle().vocabulary.tokens()[..5].join(" ");
    let a = scorer.score(7, &text, &cfg).unwrap();
    let b = scorer.score(7, &text, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.uncertainty.function, ScoreFunction::Mi);
    assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    // An MLP bundle cannot serve BBB sampling.
    assert!(scorer.score(7, &text, &config(InferenceMode::Bbb, 0.1)).is_err());
}

#[test]
fn service_with_real_model() {
    let dir = tempfile::tempdir().unwrap();
    let scorer: Arc<dyn Scorer> = Arc::new(ModelScorer::new(bundle()));
    let svc = Service::open(dir.path().join("events.jsonl"), Some(scorer.clone()), Some(config(InferenceMode::Mcd, 0.05)))
        .unwrap();
    let item = svc.classify("completely unknown words here").unwrap();
    assert_eq!(item.class_probabilities.len(), 4);
    assert_eq!(item.status == modq_service::ItemStatus::Auto, item.uncertainty.value <= 0.05);

    let mut wrong = config(InferenceMode::Mcd, 0.05);
    wrong.class_names.pop();
    assert!(Service::open(dir.path().join("other.jsonl"), Some(scorer), Some(wrong)).is_err());
}
