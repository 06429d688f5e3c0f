use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Number, Value};

use super::{OrchestratorError, RunManifest, MANIFEST_FILE};

pub const SUMMARY_FILE: &str = "summary.json";

fn read(dir: &Path, name: &str) -> Result<String, OrchestratorError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(OrchestratorError::MissingArtifact(path));
    }
    std::fs::read_to_string(&path).map_err(|e| OrchestratorError::io(&path, e))
}

/// Numeric-looking cells become JSON numbers with their exact text; the rest
/// stay strings.
fn cell(text: &str) -> Value {
    match Number::from_str(text) {
        Ok(n) => Value::Number(n),
        Err(_) => match text {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => Value::String(text.to_owned()),
        },
    }
}

fn rows(dir: &Path, name: &str) -> Result<Vec<Map<String, Value>>, OrchestratorError> {
    let text = read(dir, name)?;
    let malformed = |e: csv::Error| OrchestratorError::MalformedArtifact { path: dir.join(name), message: e.to_string() };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(malformed)?.clone();
    reader
        .records()
        .map(|r| {
            let r = r.map_err(malformed)?;
            Ok(header.iter().zip(r.iter()).map(|(h, v)| (h.to_owned(), cell(v))).collect())
        })
        .collect()
}

/// Joins the run's KPI tables into `summary.json` and returns its path.
///
/// Totals count parcels by final status from `parcels.csv`; every other
/// number is copied verbatim from its source table.
pub fn report(dir: &Path) -> Result<PathBuf, OrchestratorError> {
    let manifest_text = read(dir, MANIFEST_FILE)?;
    let manifest: RunManifest = serde_json::from_str(&manifest_text).map_err(|e| OrchestratorError::MalformedArtifact {
        path: dir.join(MANIFEST_FILE),
        message: e.to_string(),
    })?;

    let parcels = rows(dir, "parcels.csv")?;
    let count = |status: &str| parcels.iter().filter(|r| r.get("status") == Some(&Value::from(status))).count();
    let mut totals = Map::new();
    totals.insert("parcels".into(), parcels.len().into());
    totals.insert("delivered".into(), count("delivered").into());
    totals.insert("failed".into(), count("failed").into());

    let mut summary = Map::new();
    summary.insert("scenario".into(), manifest.scenario.clone().into());
    summary.insert("seed".into(), manifest.seed.into());
    summary.insert("days".into(), manifest.days.into());
    summary.insert("freight_only".into(), manifest.freight_only.into());
    summary.insert("totals".into(), Value::Object(totals));
    let table = |name: &str| rows(dir, name).map(|r| Value::Array(r.into_iter().map(Value::Object).collect()));
    summary.insert("demand".into(), table("demand_kpis.csv")?);
    summary.insert("market".into(), table("market_kpis.csv")?);
    summary.insert("scheduling".into(), table("scheduling_kpis.csv")?);
    if !manifest.freight_only {
        summary.insert("humat".into(), table("humat_kpis.csv")?);
    }

    let mut text = serde_json::to_string_pretty(&Value::Object(summary)).expect("summary serializes");
    text.push('\n');
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, text).map_err(|e| OrchestratorError::io(&path, e))?;
    Ok(path)
}
