//! Library half of the `modq` binary: config handling, trial orchestration
//! and the subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod output;

pub use cli::Cli;
pub use commands::run;
pub use config::{load_config, parse_config, ExperimentConfig, Overrides};
pub use error::{CliError, Result};
