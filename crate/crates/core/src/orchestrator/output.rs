use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DayRecord, OrchestratorError, Phase, RunOptions, Setup};
use crate::demand::demand_kpis;
use crate::humat::write_kpi_rows;
use crate::market::{write_market_rows, MARKET_KPI_HEADER};
use crate::popsynth::{write_households_csv, write_persons_csv, Population};
use crate::scenario::ScenarioConfig;
use crate::scheduling::{write_scheduling_rows, write_tour_rows, SCHEDULING_KPI_HEADER, TOUR_HEADER};

pub const MANIFEST_FILE: &str = "manifest.json";
const STAGING_DIR: &str = ".partial";

const MODULES: [&str; 8] =
    ["scenario-core", "popsynth", "socnet", "humat", "parcel-demand", "parcel-market", "parcel-scheduling", "orchestrator-cli"];

/// Reproducibility record written last into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub seed: u64,
    pub days: u32,
    pub freight_only: bool,
    pub versions: BTreeMap<String, String>,
    /// Wall-clock milliseconds per phase; the only nondeterministic field.
    pub timings_ms: BTreeMap<String, f64>,
    /// SHA-256 of every other file in the directory.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &ScenarioConfig, seed: u64, days: u32, freight_only: bool) -> Self {
        let version = env!("CARGO_PKG_VERSION").to_owned();
        Self {
            scenario: config.name.clone(),
            seed,
            days,
            freight_only,
            versions: MODULES.iter().map(|m| (m.to_string(), version.clone())).collect(),
            timings_ms: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }
}

pub fn file_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

type Files = BTreeMap<String, Vec<u8>>;

fn csv_bytes(
    header: &[&str],
    fill: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
) -> Result<Vec<u8>, OrchestratorError> {
    let render = || -> csv::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if !header.is_empty() {
            w.write_record(header)?;
        }
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error().into())
    };
    render().map_err(|e| OrchestratorError::module(Phase::Report, "orchestrator", e))
}

pub(crate) fn render_population(config: &ScenarioConfig, population: &Population) -> Result<Files, OrchestratorError> {
    let mut files = Files::new();
    let err = |e: csv::Error| OrchestratorError::module(Phase::Setup, "popsynth", e);
    let mut persons = Vec::new();
    write_persons_csv(&mut persons, population, &config.schema, &config.zones).map_err(err)?;
    let mut households = Vec::new();
    write_households_csv(&mut households, population, &config.schema, Some(config.income_attribute()), &config.zones)
        .map_err(err)?;
    files.insert("persons.csv".into(), persons);
    files.insert("households.csv".into(), households);
    Ok(files)
}

pub(crate) fn render_run(
    setup: &Setup<'_>,
    records: &[DayRecord],
    days: u32,
    options: &RunOptions,
) -> Result<Files, OrchestratorError> {
    let config = setup.config;
    let mut files = render_population(config, &setup.population)?;
    let zone_ids = &setup.geometry.zone_ids;
    let carrier_ids: Vec<String> = config.carriers.iter().map(|c| c.carrier_id.clone()).collect();

    if !setup.freight_only {
        files.insert(
            "humat_kpis.csv".into(),
            csv_bytes(&["snapshot", "grouping", "category", "alternative", "agents", "share", "mean_satisfaction"], |w| {
                for (label, kpis) in &setup.humat_kpis {
                    for k in kpis {
                        write_kpi_rows(w, label, k, &config.channels)?;
                    }
                }
                Ok(())
            })?,
        );
        if options.export_network {
            let mut net = Vec::new();
            setup
                .network
                .as_ref()
                .expect("built in setup")
                .write_csv(&mut net)
                .map_err(|e| OrchestratorError::module(Phase::Setup, "socnet", e))?;
            files.insert("network.csv".into(), net);
        }
    }

    files.insert(
        "parcels.csv".into(),
        csv_bytes(&["parcel_id", "day", "household", "zone", "carrier", "channel", "status"], |w| {
            for p in records.iter().flat_map(|r| &r.parcels) {
                w.write_record([
                    p.parcel_id.to_string(),
                    p.day.to_string(),
                    p.household_id.to_string(),
                    zone_ids[p.zone].clone(),
                    p.carrier.map(|c| carrier_ids[c].clone()).unwrap_or_default(),
                    p.channel.map(|c| c.to_string()).unwrap_or_default(),
                    p.status().to_string(),
                ])?;
            }
            Ok(())
        })?,
    );

    let all: Vec<_> = records.iter().flat_map(|r| r.parcels.iter().cloned()).collect();
    let mut demand = Vec::new();
    demand_kpis(&all)
        .write_csv(&mut demand, zone_ids, &carrier_ids, days)
        .map_err(|e| OrchestratorError::module(Phase::Report, "parcel-demand", e))?;
    files.insert("demand_kpis.csv".into(), demand);

    files.insert(
        "assignments.csv".into(),
        csv_bytes(&["parcel_id", "channel", "detail", "fallback"], |w| {
            for a in records.iter().flat_map(|r| &r.assignments) {
                w.write_record([
                    a.parcel_id.to_string(),
                    a.channel.to_string(),
                    a.detail_label(&config.lockers),
                    a.fallback.to_string(),
                ])?;
            }
            Ok(())
        })?,
    );
    files.insert(
        "market_kpis.csv".into(),
        csv_bytes(&MARKET_KPI_HEADER, |w| records.iter().try_for_each(|r| write_market_rows(w, &r.market)))?,
    );
    files.insert(
        "tours.csv".into(),
        csv_bytes(&TOUR_HEADER, |w| {
            records
                .iter()
                .try_for_each(|r| write_tour_rows(w, &r.tours, &config.carriers, zone_ids, &setup.geometry.dist))
        })?,
    );
    files.insert(
        "scheduling_kpis.csv".into(),
        csv_bytes(&SCHEDULING_KPI_HEADER, |w| {
            records.iter().try_for_each(|r| write_scheduling_rows(w, &r.scheduling, &config.carriers))
        })?,
    );
    Ok(files)
}

/// Writes `files` into a staging directory inside `out`, adds the manifest,
/// then moves everything into place. A failure before the move leaves `out`
/// without any new outputs.
pub(crate) fn commit(out: &Path, files: Files, manifest: &mut RunManifest) -> Result<(), OrchestratorError> {
    let staging = out.join(STAGING_DIR);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| OrchestratorError::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| OrchestratorError::io(&staging, e))?;
    manifest.files = files.iter().map(|(name, bytes)| (name.clone(), file_checksum(bytes))).collect();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    let mut all = files;
    all.insert(MANIFEST_FILE.into(), text.into_bytes());
    for (name, bytes) in &all {
        let path = staging.join(name);
        std::fs::write(&path, bytes).map_err(|e| OrchestratorError::io(&path, e))?;
    }
    // Manifest last, so a present manifest implies a complete directory.
    let mut names: Vec<&String> = all.keys().filter(|n| n.as_str() != MANIFEST_FILE).collect();
    let manifest_name = MANIFEST_FILE.to_owned();
    names.push(&manifest_name);
    for name in names {
        let (from, to) = (staging.join(name), out.join(name));
        std::fs::rename(&from, &to).map_err(|e| OrchestratorError::io(&to, e))?;
    }
    std::fs::remove_dir(&staging).map_err(|e| OrchestratorError::io(&staging, e))
}
