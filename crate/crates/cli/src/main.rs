//! `sharedspace`: simulate, calibrate, cluster and evaluate mixed pedestrian/car scenes.
//!
//! Exit codes: 0 success, 1 internal error, 2 input error, 3 stage dependency error,
//! 4 missing artifact.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Method;
use config::{Loaded, VariantTag};
use failure::{input, Result};

#[derive(Parser)]
#[command(name = "sharedspace", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; also where earlier artifacts are looked up.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every scenario and write trajectories, event logs and optional plots.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write an SVG per scenario (recorded dashed, simulated solid).
        #[arg(long)]
        plot: bool,
        #[arg(long, value_enum, num_args = 1.., value_delimiter = ',')]
        variant: Vec<VariantTag>,
    },
    /// Run calibration stages and write the report and per-variant parameters.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Stages to run (S1..S8); all when omitted.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Cluster individually calibrated pedestrians.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Score simulated trajectories against the recordings.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, num_args = 1.., value_delimiter = ',')]
        variant: Vec<VariantTag>,
    },
}

fn setup(common: &Common) -> Result<(Loaded, u64)> {
    if !common.config.exists() {
        return Err(input(format!("config file not found: {}", common.config.display())));
    }
    let cfg = Loaded::from_path(&common.config)?;
    let seed = common
        .seed
        .or(cfg.run.seed)
        .ok_or_else(|| input("no seed given; pass --seed or set \"seed\" in the config"))?;
    Ok((cfg, seed))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, plot, variant } => {
            let (cfg, _) = setup(&common)?;
            commands::simulate(&cfg, &common.out, plot, &variant)
        }
        Command::Calibrate { common, stages } => {
            let stages = commands::parse_stages(&stages)?;
            let (cfg, seed) = setup(&common)?;
            commands::calibrate(&cfg, seed, &common.out, &stages)
        }
        Command::Cluster { common, method } => {
            let (cfg, seed) = setup(&common)?;
            commands::cluster(&cfg, seed, &common.out, method)
        }
        Command::Evaluate { common, variant } => {
            let (cfg, _) = setup(&common)?;
            commands::evaluate(&cfg, &common.out, &variant)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sharedspace: {e}");
            ExitCode::from(e.code())
        }
    }
}
