//! `neurodecode`: batch front end for the decoding pipeline.

mod commands;
mod config;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{Ctx, MissingInput};
use config::{ConfigError, RunConfig};
use run::{Locked, Run};

#[derive(Parser)]
#[command(
    name = "neurodecode",
    version,
    about = "Decode acoustic speech features from ECoG recordings"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Fold to train, evaluate or explain (cv runs every fold without it).
    #[arg(long, global = true)]
    fold: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth,
    /// Compute band features and targets from a corpus.
    Preprocess,
    /// Audit blocks for acoustic contamination.
    Contam,
    /// Write a DTW-augmented feature set.
    Augment,
    /// Train one fold and save its checkpoint.
    Train,
    /// Cross-validate and print the summary row.
    Cv,
    /// Pretrain on a source participant and fine-tune on the target.
    Transfer,
    /// Score a checkpoint on its fold's test trials.
    Evaluate,
    /// SmoothGrad saliency of a checkpoint.
    Saliency,
    /// Shuffled-target baseline runs.
    Baseline,
    /// Render a comma-separated grid as a PNG heatmap.
    Plot,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Contam => "contam",
            Command::Augment => "augment",
            Command::Train => "train",
            Command::Cv => "cv",
            Command::Transfer => "transfer",
            Command::Evaluate => "evaluate",
            Command::Saliency => "saliency",
            Command::Baseline => "baseline",
            Command::Plot => "plot",
        }
    }
}

fn threads() -> Result<usize> {
    match std::env::var("NEURODECODE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ConfigError(format!("NEURODECODE_THREADS={v:?} is not a positive integer")).into()),
        },
        Err(_) => Ok(1),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let Some(path) = &cli.config else {
        return Err(ConfigError("--config <path> is required".into()).into());
    };
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let ctx = Ctx {
        config: &config,
        fold: cli.fold,
        threads: threads()?,
    };
    let mut run = Run::open(&cli.out)?;
    let f = match cli.command {
        Command::Synth => commands::synth,
        Command::Preprocess => commands::preprocess,
        Command::Contam => commands::contam,
        Command::Augment => commands::augment,
        Command::Train => commands::train,
        Command::Cv => commands::cv,
        Command::Transfer => commands::transfer,
        Command::Evaluate => commands::evaluate,
        Command::Saliency => commands::saliency,
        Command::Baseline => commands::baseline,
        Command::Plot => commands::plot,
    };
    f(&ctx, &mut run)?;
    run.finish(cli.command.name(), &config.hash(), config.seed)
}

/// 2 configuration, 3 data, 4 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<MissingInput>() || cause.is::<Locked>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<neurodecode::Error>() {
            if e.is_numerical() {
                return 4;
            }
            if matches!(e, neurodecode::Error::Config(_)) {
                return 2;
            }
            return 3;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
