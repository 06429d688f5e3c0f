//! Two-phase run driver.
//!
//! Setup builds the population, social network and consumer agents and lets
//! preferences settle; execution then runs the daily freight loop with
//! delivery experiences fed back into the agents. All files are rendered in
//! memory and only land in the run directory once the whole run succeeded.

mod execute;
mod output;
mod report;
mod setup;

pub use crate::demand::DeliveryOutcome;
pub use execute::{execute_phase, DayRecord};
pub use output::{file_checksum, RunManifest, MANIFEST_FILE};
pub use report::{report, SUMMARY_FILE};
pub use setup::{setup_phase, Geometry, Setup};

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::popsynth::PopulationCsvError;
use crate::scenario::{ScenarioConfig, ScenarioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Execute,
    Report,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Setup => "setup",
            Phase::Execute => "execute",
            Phase::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("population file {path}: {source}")]
    PopulationFile { path: PathBuf, source: PopulationCsvError },
    #[error("{phase}/{module}: {message}")]
    Module { phase: Phase, module: &'static str, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("malformed artifact {path}: {message}")]
    MalformedArtifact { path: PathBuf, message: String },
}

impl OrchestratorError {
    pub(crate) fn module(phase: Phase, module: &'static str, err: impl fmt::Display) -> Self {
        Self::Module { phase, module, message: err.to_string() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// 2 for invalid input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Scenario(_) | Self::PopulationFile { .. } => 2,
            _ => 3,
        }
    }
}

/// Overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub days: Option<u32>,
    /// Skip consumer agents; channels come from fixed shares.
    pub freight_only: bool,
    pub export_network: bool,
    /// Pre-built person table instead of synthesis.
    pub population: Option<PathBuf>,
}

/// Runs setup and `days` of execution and writes all outputs to `out`.
pub fn run(config: &ScenarioConfig, options: &RunOptions, out: &Path) -> Result<RunManifest, OrchestratorError> {
    config.validate_for_run(options.freight_only)?;
    let seed = options.seed.unwrap_or(config.seed);
    let days = options.days.unwrap_or(config.day_count);

    let started = Instant::now();
    let mut setup = setup_phase(config, seed, options)?;
    let setup_ms = started.elapsed().as_secs_f64() * 1e3;

    let started = Instant::now();
    let records = execute_phase(&mut setup, days)?;
    let execute_ms = started.elapsed().as_secs_f64() * 1e3;

    let started = Instant::now();
    let files = output::render_run(&setup, &records, days, options)?;
    let mut manifest = RunManifest::new(config, seed, days, options.freight_only);
    manifest.timings_ms.insert("setup".into(), setup_ms);
    manifest.timings_ms.insert("execute".into(), execute_ms);
    manifest.timings_ms.insert("render".into(), started.elapsed().as_secs_f64() * 1e3);
    output::commit(out, files, &mut manifest)?;
    log::info!("run `{}` seed {seed}: {days} days written to {}", config.name, out.display());
    Ok(manifest)
}

/// Synthesizes the population only and writes `persons.csv` and `households.csv`.
pub fn synth(config: &ScenarioConfig, options: &RunOptions, out: &Path) -> Result<RunManifest, OrchestratorError> {
    let seed = options.seed.unwrap_or(config.seed);
    let started = Instant::now();
    let population = setup::synthesize(config, seed, options.population.as_deref())?;
    let mut manifest = RunManifest::new(config, seed, 0, true);
    manifest.timings_ms.insert("synth".into(), started.elapsed().as_secs_f64() * 1e3);
    let files = output::render_population(config, &population)?;
    output::commit(out, files, &mut manifest)?;
    Ok(manifest)
}
