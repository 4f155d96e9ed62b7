use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use modq_core::uncertainty::ScoreFunction;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "modq", version, about = "Uncertainty-based moderation: train, evaluate, calibrate, serve")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per trial and write trial_<i>/model.json.
    Train(ExperimentArgs),
    /// Per-trial metrics and a mean|std summary.
    Evaluate(ExperimentArgs),
    /// Moderation curves and saturation reports per score function.
    Simulate(ExperimentArgs),
    /// Merge per-trial metrics and saturation reports into one table.
    Report(ExperimentArgs),
    /// Find the saturation point on trial 0 and write a service config.
    Calibrate {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Defaults to the first configured score function.
        #[arg(long, value_parser = parse_score_function)]
        score_function: Option<ScoreFunction>,
    },
    /// Run the moderation service.
    Serve(ServeArgs),
    /// Write the synthetic evaluation corpus as JSONL.
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config or a previous run's manifest.
    #[arg(short, long, default_value = "modq.json")]
    pub config: PathBuf,
    /// Output directory (overrides MODQ_OUT and the config).
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Smoothing polynomial degree.
    #[arg(long)]
    pub degree: Option<usize>,
}

impl ExperimentArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output_dir.clone(),
            trials: self.trials,
            grid_step: self.grid_step,
            degree: self.degree,
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config written by `calibrate`.
    #[arg(long)]
    pub service_config: PathBuf,
    /// Event log; defaults to events.jsonl next to the service config.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory with the built moderator UI.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_docs: Option<usize>,
    #[arg(long)]
    pub ambiguity_rate: Option<f64>,
}

fn parse_score_function(s: &str) -> Result<ScoreFunction, String> {
    s.parse().map_err(|e: modq_core::Error| e.to_string())
}
