//! Command-line driver for `cubemix`: configuration, PPM and checkpoint
//! I/O, and the `train`, `infer`, `eval`, `ablate` and `spectrum` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod image;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cubemix", version, about = "Multi-scale frequency-domain deblurring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output file (metric CSV, image, table) or, for `spectrum`, a prefix
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl From<&CommonArgs> for commands::Common {
    fn from(a: &CommonArgs) -> Self {
        commands::Common {
            config: a.config.clone(),
            seed: a.seed,
            checkpoint: a.checkpoint.clone(),
            out: a.out.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a synthetic or directory dataset; writes a checkpoint and a metric CSV
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Deblur one PPM image
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a checkpoint on <dataset>/blurry/*.ppm against <dataset>/sharp/*.ppm
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train and score every configured ablation variant on shared data
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render Fourier planes of an image, and per-block spectra with a checkpoint
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
    },
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train { common } => commands::run_train(&common.into()),
        Command::Infer { common, input } => commands::run_infer(&common.into(), input),
        Command::Eval { common, dataset } => commands::run_eval(&common.into(), dataset),
        Command::Ablate { common } => commands::run_ablate(&common.into()),
        Command::Spectrum { common, input } => commands::run_spectrum(&common.into(), input),
    }
}
