use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oodens_cli::config::RunConfig;
use oodens_cli::layout::Layout;
use oodens_cli::{exit_code, pipeline, CliError};

/// Out-of-distribution detection across independently trained modes.
#[derive(Parser)]
#[command(name = "oodens", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for this run.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark datasets and the manifest.
    GenData(CommonArgs),
    /// Train one mode per configured seed and write checkpoints.
    TrainModes(CommonArgs),
    /// Forward datasets through trained modes and write output dumps.
    Dump {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint files to dump (defaults to every configured seed).
        #[arg(long = "ckpt")]
        ckpts: Vec<PathBuf>,
        /// Dataset names to dump (defaults to every dataset in the manifest).
        #[arg(long = "dataset", visible_alias = "datasets")]
        datasets: Vec<String>,
    },
    /// Score every detector over mode subsets and write report CSVs.
    Eval(CommonArgs),
    /// Loss-plane and slice grids plus feature trajectories.
    Landscape(CommonArgs),
    /// Gap-inequality sweep and learned-mode check.
    Theory(CommonArgs),
    /// Independent- vs subspace-mode ensemble comparison.
    Ablate(CommonArgs),
    /// Run the whole study end to end.
    Reproduce {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the config's top-level seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => {
            let config = RunConfig::load(&args.config)?;
            pipeline::run_gen_data(&config, &Layout::new(&args.out))
        }
        Command::TrainModes(args) => {
            let config = RunConfig::load(&args.config)?;
            pipeline::run_train_modes(&config, &Layout::new(&args.out))
        }
        Command::Dump {
            common,
            ckpts,
            datasets,
        } => {
            let config = RunConfig::load(&common.config)?;
            pipeline::run_dump(&config, &Layout::new(&common.out), &ckpts, &datasets)
        }
        Command::Eval(args) => {
            let config = RunConfig::load(&args.config)?;
            pipeline::run_eval(&config, &Layout::new(&args.out))
        }
        Command::Landscape(args) => {
            let config = RunConfig::load(&args.config)?;
            pipeline::run_landscape(&config, &Layout::new(&args.out))
        }
        Command::Theory(args) => {
            let config = RunConfig::load(&args.config)?;
            pipeline::run_theory(&config, &Layout::new(&args.out))
        }
        Command::Ablate(args) => {
            let config = RunConfig::load(&args.config)?;
            pipeline::run_ablate(&config, &Layout::new(&args.out))
        }
        Command::Reproduce { common, seed } => {
            let mut config = RunConfig::load(&common.config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            pipeline::run_reproduce(&config, &Layout::new(&common.out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
