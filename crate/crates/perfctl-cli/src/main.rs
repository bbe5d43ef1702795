use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

/// Performative control experiments: simulation, condition checks and the
/// two stable-policy solvers.
#[derive(Debug, Parser)]
#[command(name = "perfctl", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent replicates.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the initial policy once and write the trajectory.
    Simulate,
    /// Write the sensitivity constants and the existence-condition report.
    Analyze,
    /// Run repeated stochastic gradient descent.
    Rsgd,
    /// Run repeated exact minimization.
    Rrm,
    /// Run the stock-investment experiment.
    Stock(StockArgs),
}

#[derive(Debug, clap::Args)]
pub struct StockArgs {
    #[arg(long, value_enum, default_value_t = ScheduleArg::Ascend)]
    pub schedule: ScheduleArg,
    /// Schedule file for `--schedule file`, one value per line.
    #[arg(long)]
    pub schedule_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScaleArg::Reduced)]
    pub scale: ScaleArg,
    #[arg(long, value_enum, default_value_t = RegimeArg::Stable)]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    /// Accuracy of the stable-policy reference.
    #[arg(long, default_value_t = 1e-8)]
    pub reference_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Ascend,
    Descend,
    Random,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Paper,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Stable,
    Unstable,
    General,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(commands::Outcome::Completed) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Diverged) => {
            eprintln!("completed with a divergence flag");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
