//! `lmsim`: synthesize populations, run scenarios and summarize runs.
//!
//! Exit codes: 0 success, 2 invalid scenario or arguments, 3 failure while
//! running. Log level comes from `LMSIM_LOG` (e.g. `LMSIM_LOG=debug`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmsim_core::orchestrator::{self, OrchestratorError, RunOptions};
use lmsim_core::load_scenario;

#[derive(Parser)]
#[command(name = "lmsim", version, about = "Agent-based last-mile parcel delivery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic population and write persons.csv / households.csv.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run setup and the daily simulation loop.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of simulated days.
        #[arg(long)]
        days: Option<u32>,
        /// Disable consumer agents and use fixed channel shares.
        #[arg(long)]
        freight_only: bool,
        /// Also write the social network edge list.
        #[arg(long)]
        export_network: bool,
        /// Use this person table instead of synthesizing one.
        #[arg(long)]
        population: Option<PathBuf>,
    },
    /// Join a run directory's KPI tables into summary.json.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LMSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), OrchestratorError> {
    match command {
        Command::Synth { scenario, out, seed } => {
            let config = load_scenario(&scenario)?;
            orchestrator::synth(&config, &RunOptions { seed, ..Default::default() }, &out)?;
            println!("population written to {}", out.display());
        }
        Command::Run { scenario, out, seed, days, freight_only, export_network, population } => {
            let config = load_scenario(&scenario)?;
            let options = RunOptions { seed, days, freight_only, export_network, population };
            let manifest = orchestrator::run(&config, &options, &out)?;
            println!("{} files written to {}", manifest.files.len() + 1, out.display());
        }
        Command::Report { dir } => {
            let path = orchestrator::report(&dir)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
