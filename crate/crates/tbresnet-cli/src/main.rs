//! Command-line front end for the tbresnet library.
//!
//! Every subcommand reads one JSON configuration file, writes its outputs
//! into a directory, and mirrors back the effective configuration plus a
//! manifest. Runs are deterministic: the same configuration and seed
//! produce byte-identical outputs.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tbresnet::error::Error;
use tbresnet::parallel;

use crate::config::load_config;

#[derive(Parser)]
#[command(name = "tbresnet", version, about = "Theory-blended discrete choice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic choice dataset from a theory scenario
    Generate(RunArgs),
    /// Fit a blended model at a fixed delta
    Fit(RunArgs),
    /// Fit across a delta grid and report the best blend
    Sweep(RunArgs),
    /// Score a saved model on a dataset
    Eval(RunArgs),
    /// Trace metrics under adversarial and random input perturbations
    Perturb(RunArgs),
    /// Point elasticities of choice probabilities
    Elasticity(RunArgs),
    /// Utility slices and grids around a reference observation
    Surface(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration for this subcommand
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing
    #[arg(long, default_value = "tbresnet-out")]
    out: PathBuf,
    /// Thread count for data-parallel sections
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn prepare(&self) {
        if let Some(n) = self.workers {
            if !parallel::configure_workers(n) {
                eprintln!("note: worker count ignored (pool already running or sequential build)");
            }
        }
    }
}

fn run(cli: &Cli) -> tbresnet::Result<()> {
    macro_rules! dispatch {
        ($args:expr, $ty:ty, $cmd:path) => {{
            $args.prepare();
            let mut cfg: $ty = load_config(&$args.config)?;
            if let Some(seed) = $args.seed {
                cfg.seed = seed;
            }
            $cmd(&cfg, &$args.out)
        }};
    }

    match &cli.command {
        Command::Generate(a) => dispatch!(a, config::GenerateCmd, commands::cmd_generate),
        Command::Fit(a) => dispatch!(a, config::FitCmd, commands::cmd_fit),
        Command::Sweep(a) => dispatch!(a, config::SweepCmd, commands::cmd_sweep),
        Command::Eval(a) => dispatch!(a, config::EvalCmd, commands::cmd_eval),
        Command::Perturb(a) => dispatch!(a, config::PerturbCmd, commands::cmd_perturb),
        Command::Elasticity(a) => dispatch!(a, config::ElasticityCmd, commands::cmd_elasticity),
        Command::Surface(a) => dispatch!(a, config::SurfaceCmd, commands::cmd_surface),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numerical(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
