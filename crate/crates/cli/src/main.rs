use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levex_cli::commands;
use levex_cli::config::{RunConfig, PAPER_DEFAULTS};

#[derive(Parser)]
#[command(
    name = "levex",
    version,
    about = "Pulse-modulated optical trap simulator and measurement chain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file path, or `paper-defaults` for the bundled configuration
    #[arg(long, default_value = "paper-defaults")]
    config: String,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the ensemble size
    #[arg(long)]
    ensemble: Option<u32>,
    /// Write every trajectory CSV, not only the statistics
    #[arg(long)]
    keep_trajectories: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a Monte Carlo ensemble of the pulse protocol
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Propagate the analytic linear model and print protocol constants
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Spectral calibration: PSD, resonance fit, equipartition factor
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Trajectory CSV (t,z,v) to calibrate
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Generate the calibration run internally instead
        #[arg(long)]
        synthetic: bool,
    },
    /// Measurement-chain analysis of a directory of trajectory CSVs
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory containing trajectory CSVs
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Print the pulse schedule: timings, repetition frequency, duration
    Protocol {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let text = if common.config == "paper-defaults" {
        PAPER_DEFAULTS.to_string()
    } else {
        std::fs::read_to_string(&common.config)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", common.config))?
    };
    let mut config = RunConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(ensemble) = common.ensemble {
        config.ensemble = ensemble;
    }
    if common.keep_trajectories {
        config.keep_trajectories = true;
    }
    Ok(config)
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { common } => {
            let config = load_config(common)?;
            commands::run_simulate(&config, &common.out)?;
        }
        Command::Oracle { common } => {
            let config = load_config(common)?;
            commands::run_oracle(&config, &common.out)?;
        }
        Command::Calibrate { common, input, synthetic } => {
            let config = load_config(common)?;
            if input.is_none() && !synthetic {
                anyhow::bail!("calibrate needs --input FILE or --synthetic");
            }
            commands::run_calibrate(&config, &common.out, input.as_deref())?;
        }
        Command::Analyze { common, trajectories } => {
            let config = load_config(common)?;
            commands::run_analyze(&config, trajectories, &common.out)?;
        }
        Command::Protocol { common } => {
            let config = load_config(common)?;
            commands::run_protocol(&config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
