//! Command-line driver: configuration, run manifests and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Profile, RunOutput};
use crate::config::ExperimentConfig;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "crowding", version, about = "Letter-crowding experiments on a small convolutional network")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one configuration key (dotted path), applied after the file.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub set: Vec<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for the sweep.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Parent directory for run directories.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write sample stimuli and the full condition grid listing.
    Stimuli {
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
    /// Train the reference network.
    Train,
    /// Evaluate a checkpoint on every grid condition.
    Sweep {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Build the crowding report from record files.
    Analyze {
        /// Record file; repeat to pool several runs.
        #[arg(long = "records", value_name = "PATH", required = true)]
        records: Vec<PathBuf>,
        /// Skip psychometric fits.
        #[arg(long)]
        no_fits: bool,
    },
    /// Train, sweep and analyze one named experiment.
    Reproduce {
        #[arg(value_enum)]
        profile: Profile,
    },
}

impl Cli {
    /// The configuration after the file, `--set` items and direct flags.
    pub fn resolve_config(&self) -> CliResult<ExperimentConfig> {
        let mut config = ExperimentConfig::load(self.config.as_deref(), &self.set)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn run(cli: &Cli) -> CliResult<RunOutput> {
    let config = cli.resolve_config()?;
    let parent = config.out_dir.clone();
    match &cli.command {
        Command::Stimuli { samples } => commands::stimuli(&config, *samples, &parent),
        Command::Train => commands::train(&config, &parent),
        Command::Sweep { checkpoint } => commands::sweep(&config, checkpoint, &parent),
        Command::Analyze { records, no_fits } => commands::analyze(&config, records, !no_fits, &parent),
        Command::Reproduce { profile } => commands::reproduce(&config, *profile, &parent),
    }
}
