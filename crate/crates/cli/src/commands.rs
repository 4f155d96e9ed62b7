use std::path::{Path, PathBuf};
use std::sync::Arc;

use modq_core::classifiers::save_bundle;
use modq_core::corpus::to_jsonl;
use modq_core::evaluation::MetricsReport;
use modq_core::moderation::{
    build_report, curve_csv, random_baseline, simulate_moderation_curve, smooth_curve, SaturationReport,
};
use modq_core::synthetic::{generate_corpus, SyntheticCorpusSpec};
use modq_core::uncertainty::ScoreFunction;
use modq_service::{ModelScorer, Scorer, Service, ServiceConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cli::{Cli, Command, ExperimentArgs, GenCorpusArgs, ServeArgs};
use crate::config::{load_config, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiment::{load_corpus, run_trial, run_trials};
use crate::manifest::Manifest;
use crate::output::{cell, create_parent, read_json, write_file, write_json};

pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_SUMMARY_FILE: &str = "metrics_summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const CALIBRATION_DIR: &str = "calibration";

pub fn trial_dir(cfg: &ExperimentConfig, trial: usize) -> PathBuf {
    cfg.output_dir.join(format!("trial_{trial}"))
}

pub fn curve_file(function: ScoreFunction) -> String {
    format!("curve_{function}.csv")
}

pub fn report_file(function: ScoreFunction) -> String {
    format!("report_{function}.json")
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::Evaluate(args) => evaluate(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Report(args) => report(&args),
        Command::Calibrate {
            experiment,
            score_function,
        } => calibrate(&experiment, score_function),
        Command::Serve(args) => serve(&args),
        Command::GenCorpus(args) => gen_corpus(&args),
    }
}

fn load(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let cfg = load_config(&args.config, &args.overrides())?;
    log::info!("config {} (sha256 {})", args.config.display(), cfg.hash());
    Ok(cfg)
}

fn all_seeds(cfg: &ExperimentConfig) -> Vec<crate::config::TrialSeeds> {
    (0..cfg.trials).map(|t| cfg.trial_seeds(t)).collect()
}

fn train(args: &ExperimentArgs) -> Result<()> {
    let cfg = load(args)?;
    let corpus = load_corpus(&cfg)?;
    for run in run_trials(&cfg, &corpus, false)? {
        let path = trial_dir(&cfg, run.seeds.trial).join("model.json");
        create_parent(&path)?;
        save_bundle(&run.bundle, &path)?;
        println!("trial {}: {}", run.seeds.trial, path.display());
    }
    Manifest::new("train", &cfg, all_seeds(&cfg)).write(&cfg.output_dir)?;
    Ok(())
}

/// Table-1 style cells, each `mean|std` in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub trials: usize,
    pub f1: String,
    pub auc_roc: String,
    pub mean_conf_mis: String,
    pub mean_conf_suc: String,
    pub range: String,
}

/// Metrics depend on the predicted label and its confidence only, so they are
/// the same for every score function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

fn summarize_metrics(trials: &[TrialMetrics]) -> MetricsSummary {
    let col = |get: fn(&MetricsReport) -> f64| cell(&trials.iter().map(|t| get(&t.metrics)).collect::<Vec<_>>());
    MetricsSummary {
        trials: trials.len(),
        f1: col(|m| m.f1),
        auc_roc: col(|m| m.auc_roc),
        mean_conf_mis: col(|m| m.mean_conf_mis),
        mean_conf_suc: col(|m| m.mean_conf_suc),
        range: col(|m| m.range),
    }
}

fn evaluate(args: &ExperimentArgs) -> Result<()> {
    let cfg = load(args)?;
    let corpus = load_corpus(&cfg)?;
    let mut all = Vec::with_capacity(cfg.trials);
    for run in run_trials(&cfg, &corpus, true)? {
        let tm = TrialMetrics {
            trial: run.seeds.trial,
            metrics: MetricsReport::from_records(&run.records[0].1)?,
        };
        write_json(&trial_dir(&cfg, tm.trial).join(METRICS_FILE), &tm)?;
        all.push(tm);
    }
    let summary = summarize_metrics(&all);
    write_json(&cfg.output_dir.join(METRICS_SUMMARY_FILE), &summary)?;
    print!("{}", metrics_table(&summary));
    Manifest::new("evaluate", &cfg, all_seeds(&cfg)).write(&cfg.output_dir)?;
    Ok(())
}

fn metrics_table(m: &MetricsSummary) -> String {
    format!(
        "{:>14} {:>14} {:>14} {:>14} {:>14}\n{:>14} {:>14} {:>14} {:>14} {:>14}\n",
        "F1", "AUC-ROC", "conf_mis", "conf_suc", "range", m.f1, m.auc_roc, m.mean_conf_mis, m.mean_conf_suc, m.range
    )
}

fn simulate(args: &ExperimentArgs) -> Result<()> {
    let cfg = load(args)?;
    let corpus = load_corpus(&cfg)?;
    let options = cfg.report_options();
    for run in run_trials(&cfg, &corpus, true)? {
        let dir = trial_dir(&cfg, run.seeds.trial);
        for (f, records) in &run.records {
            let raw = simulate_moderation_curve(records, options.grid_step)?;
            let curve = smooth_curve(&raw, options.degree)?;
            let baseline = random_baseline(curve.initial_f1())?;
            write_file(&dir.join(curve_file(*f)), &curve_csv(&curve, &baseline))?;
            let report = match build_report(records, *f, options) {
                Ok(r) => serde_json::to_value(&r.report).expect("report serialises"),
                Err(e) => {
                    log::warn!("trial {} `{f}`: {e}", run.seeds.trial);
                    serde_json::json!({ "score_function": f, "error": e.to_string() })
                }
            };
            write_json(&dir.join(report_file(*f)), &report)?;
        }
        println!("trial {}: {}", run.seeds.trial, dir.display());
    }
    Manifest::new("simulate", &cfg, all_seeds(&cfg)).write(&cfg.output_dir)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSummaryRow {
    pub score_function: ScoreFunction,
    /// Trials in which a saturation point was found.
    pub saturated: usize,
    /// The remaining cells are `mean|std` in percent over saturated trials.
    pub f1_0: String,
    pub f1_at_m_star: String,
    pub m_star: String,
    pub f1_gain_pp: String,
    pub effort_savings: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub trials: usize,
    pub metrics: Option<MetricsSummary>,
    pub saturation: Vec<SaturationSummaryRow>,
}

fn report(args: &ExperimentArgs) -> Result<()> {
    let cfg = load(args)?;
    let mut trial_metrics = Vec::new();
    for t in 0..cfg.trials {
        let path = trial_dir(&cfg, t).join(METRICS_FILE);
        if path.is_file() {
            trial_metrics.push(read_json::<TrialMetrics>(&path)?);
        }
    }
    let metrics = match trial_metrics.len() {
        0 => None,
        n if n == cfg.trials => Some(summarize_metrics(&trial_metrics)),
        n => {
            return Err(CliError::Other(format!(
                "found metrics for {n} of {} trials; re-run `evaluate`",
                cfg.trials
            )))
        }
    };

    let mut saturation = Vec::new();
    for &f in &cfg.score_functions {
        let mut reports = Vec::new();
        let mut found = 0;
        for t in 0..cfg.trials {
            let path = trial_dir(&cfg, t).join(report_file(f));
            if !path.is_file() {
                continue;
            }
            found += 1;
            let v: Value = read_json(&path)?;
            if v.get("error").is_none() {
                let r: SaturationReport = serde_json::from_value(v)
                    .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
                reports.push(r);
            }
        }
        if found == 0 {
            continue;
        }
        let pct = |get: fn(&SaturationReport) -> f64| cell(&reports.iter().map(|r| 100.0 * get(r)).collect::<Vec<_>>());
        saturation.push(SaturationSummaryRow {
            score_function: f,
            saturated: reports.len(),
            f1_0: pct(|r| r.f1_0),
            f1_at_m_star: pct(|r| r.f1_at_m_star),
            m_star: pct(|r| r.m_star),
            f1_gain_pp: cell(&reports.iter().map(|r| r.f1_gain_pp).collect::<Vec<_>>()),
            effort_savings: pct(|r| r.effort_savings),
        });
    }
    if metrics.is_none() && saturation.is_empty() {
        return Err(CliError::Other(format!(
            "no trial outputs under {}; run `evaluate` or `simulate` first",
            cfg.output_dir.display()
        )));
    }

    let merged = ExperimentReport {
        trials: cfg.trials,
        metrics,
        saturation,
    };
    write_json(&cfg.output_dir.join(REPORT_FILE), &merged)?;
    if let Some(m) = &merged.metrics {
        print!("{}", metrics_table(m));
    }
    if !merged.saturation.is_empty() {
        println!(
            "{:<4} {:>5} {:>14} {:>14} {:>14} {:>14} {:>14}",
            "fn", "sat", "F1_0", "F1*", "m*", "gain_pp", "savings"
        );
        for r in &merged.saturation {
            println!(
                "{:<4} {:>5} {:>14} {:>14} {:>14} {:>14} {:>14}",
                r.score_function.as_str(),
                format!("{}/{}", r.saturated, merged.trials),
                r.f1_0,
                r.f1_at_m_star,
                r.m_star,
                r.f1_gain_pp,
                r.effort_savings
            );
        }
    }
    Manifest::new("report", &cfg, all_seeds(&cfg)).write(&cfg.output_dir)?;
    Ok(())
}

fn calibrate(args: &ExperimentArgs, score_function: Option<ScoreFunction>) -> Result<()> {
    let r = run_calibration(args, score_function)?;
    println!("score function  {}", r.score_function);
    println!("m*              {:.4}", r.m_star);
    println!("F1 at 0 / m*    {:.4} / {:.4}", r.f1_0, r.f1_at_m_star);
    println!("effort savings  {:.2}%", 100.0 * r.effort_savings);
    println!("threshold       {}", r.threshold);
    Ok(())
}

/// Calibrates on trial 0 and writes everything `serve` needs.
pub fn run_calibration(args: &ExperimentArgs, score_function: Option<ScoreFunction>) -> Result<SaturationReport> {
    let mut cfg = load(args)?;
    let function = score_function.unwrap_or(cfg.score_functions[0]);
    let corpus = load_corpus(&cfg)?;
    let manifest = Manifest::new("calibrate", &cfg, vec![cfg.trial_seeds(0)]).with_arg("score_function", function);
    cfg.score_functions = vec![function];

    let run = run_trial(&cfg, &corpus, 0, true)?;
    let records = run.records_for(function).expect("scored with the requested function");
    let report = build_report(records, function, cfg.report_options())?;

    let dir = cfg.output_dir.join(CALIBRATION_DIR);
    write_json(&dir.join("saturation_report.json"), &report.report)?;
    write_file(&dir.join("curve.csv"), &report.curve_csv())?;
    save_bundle(&run.bundle, dir.join("model.json"))?;
    let service = ServiceConfig {
        threshold: report.report.threshold,
        score_function: function,
        mode: cfg.uncertainty.mode,
        passes: cfg.uncertainty.passes,
        model: "model.json".into(),
        class_names: run.bundle.class_names.clone(),
        seed: run.seeds.inference_seed,
    };
    write_json(&dir.join("service_config.json"), &service)?;
    manifest.write(&cfg.output_dir)?;
    Ok(report.report)
}

fn serve(args: &ServeArgs) -> Result<()> {
    let config: ServiceConfig = read_json(&args.service_config)?;
    let base = args.service_config.parent().unwrap_or(Path::new("."));
    let model_path = base.join(&config.model);
    let scorer: Arc<dyn Scorer> = Arc::new(ModelScorer::load(&model_path)?);
    let log_path = args.log.clone().unwrap_or_else(|| base.join("events.jsonl"));
    let service = Arc::new(Service::open(&log_path, Some(scorer), Some(config))?);
    println!("serving on http://{} (log {})", args.addr, log_path.display());
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(format!("runtime: {e}")))?;
    rt.block_on(modq_service::http::serve(service, args.addr, args.ui_dir.clone()))
        .map_err(|e| CliError::Other(format!("{}: {e}", args.addr)))
}

fn gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let mut spec = SyntheticCorpusSpec::default();
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.num_docs {
        spec.num_docs = n;
    }
    if let Some(r) = args.ambiguity_rate {
        spec.ambiguity_rate = r;
    }
    let corpus = generate_corpus(&spec)?;
    write_file(&args.out, &to_jsonl(&corpus))?;
    println!("{} documents, {} classes -> {}", corpus.len(), corpus.num_classes(), args.out.display());
    Ok(())
}
