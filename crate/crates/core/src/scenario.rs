//! Scenario configuration: a TOML file plus sibling CSV tables.
//!
//! ```text
//! scenario.<name>.toml   parameters, channel catalog, table file names
//! zones.csv              zone_id,lat,lon,population_weight
//! carriers.csv           carrier_id,market_share,success_rate,depot_zone,vehicle_capacity
//! lockers.csv            locker_id,zone,lat,lon,capacity,availability_pattern
//! marginals.csv          attribute,category,count
//! motives.csv            motive,group,stratum_attribute,stratum_category,importance_mean,importance_sd
//! priors.csv             motive,alternative,eval_mean,eval_sd
//! ```
//!
//! Table paths in the TOML file are resolved relative to the file itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandParams;
use crate::geo::LatLon;
use crate::humat::{EvaluationPrior, HumatParams, ImportanceRule, ImportanceShape, Motive, MotiveGroup, MotiveSpec};
use crate::market::{CrowdshippingParams, MarketParams};
use crate::popsynth::{Attribute, AttributeSchema, MarginalTable, PairSeed};
use crate::socnet::{LayerKind, NetworkParams, SimilarityWeights};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error in {path}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { path: PathBuf, line: Option<u64>, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ScenarioError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation { field: field.into(), message: message.into() }
    }
}

fn ensure(cond: bool, field: &str, message: impl FnOnce() -> String) -> Result<(), ScenarioError> {
    if cond {
        Ok(())
    } else {
        Err(ScenarioError::validation(field, message()))
    }
}

/// Delivery alternative offered to consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    HomeCourier,
    ParcelLocker,
    Crowdshipping,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::HomeCourier, Channel::ParcelLocker, Channel::Crowdshipping];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::HomeCourier => "home_courier",
            Channel::ParcelLocker => "parcel_locker",
            Channel::Crowdshipping => "crowdshipping",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown channel `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: String,
    #[serde(rename = "lat")]
    pub centroid_lat: f64,
    #[serde(rename = "lon")]
    pub centroid_lon: f64,
    pub population_weight: f64,
}

impl Zone {
    pub fn centroid(&self) -> LatLon {
        LatLon::new(self.centroid_lat, self.centroid_lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    pub carrier_id: String,
    pub market_share: f64,
    pub success_rate: f64,
    pub depot_zone: String,
    pub vehicle_capacity: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockerSpec {
    pub locker_id: String,
    pub zone: String,
    pub lat: f64,
    pub lon: f64,
    pub capacity: u32,
    /// Cyclic availability calendar starting at day 1; empty means always open.
    pub availability: Vec<bool>,
}

impl LockerSpec {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }

    pub fn available_on(&self, day: u32) -> bool {
        if self.availability.is_empty() {
            return true;
        }
        let i = (day.max(1) - 1) as usize % self.availability.len();
        self.availability[i]
    }

    fn pattern(&self) -> String {
        self.availability.iter().map(|&a| if a { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LockerRow {
    locker_id: String,
    zone: String,
    lat: f64,
    lon: f64,
    capacity: u32,
    #[serde(default)]
    availability_pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFiles {
    #[serde(default = "default_zones")]
    pub zones: String,
    #[serde(default = "default_carriers")]
    pub carriers: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lockers: Option<String>,
    #[serde(default = "default_marginals")]
    pub marginals: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_pairs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motives: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<String>,
}

fn default_zones() -> String {
    "zones.csv".into()
}
fn default_carriers() -> String {
    "carriers.csv".into()
}
fn default_marginals() -> String {
    "marginals.csv".into()
}

impl Default for TableFiles {
    fn default() -> Self {
        Self {
            zones: default_zones(),
            carriers: default_carriers(),
            lockers: None,
            marginals: default_marginals(),
            seed_pairs: None,
            motives: None,
            priors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationParams {
    /// Number of persons to synthesize.
    pub size: usize,
    /// Weight of household size `k + 1` at index `k`.
    pub household_size: Vec<f64>,
    #[serde(default = "default_ipf_tol")]
    pub ipf_tol: f64,
    #[serde(default = "default_ipf_max_iter")]
    pub ipf_max_iter: usize,
    #[serde(default = "default_employment_attribute")]
    pub employment_attribute: String,
    #[serde(default = "default_employed_category")]
    pub employed_category: String,
    #[serde(default = "default_income_attribute")]
    pub income_attribute: String,
}

fn default_ipf_tol() -> f64 {
    1e-9
}
fn default_ipf_max_iter() -> usize {
    1000
}
fn default_employment_attribute() -> String {
    "employment".into()
}
fn default_employed_category() -> String {
    "employed".into()
}
fn default_income_attribute() -> String {
    "income_band".into()
}

mod seed_repr {
    //! TOML integers are signed; seeds above `i64::MAX` are written as strings.
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(|_| serde::de::Error::custom("seed must be nonnegative")),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// On-disk shape of the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    day_count: u32,
    #[serde(with = "seed_repr")]
    seed: u64,
    channels: Vec<Channel>,
    #[serde(default)]
    tables: TableFiles,
    population: PopulationParams,
    demand: DemandParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<NetworkParams>,
    #[serde(default)]
    humat: HumatParams,
    #[serde(default)]
    market: MarketParams,
    #[serde(default)]
    crowdshipping: CrowdshippingParams,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub day_count: u32,
    pub seed: u64,
    /// Ordered channel catalog; always contains `home_courier`.
    pub channels: Vec<Channel>,
    pub tables: TableFiles,
    pub zones: Vec<Zone>,
    pub carriers: Vec<Carrier>,
    pub lockers: Vec<LockerSpec>,
    pub schema: AttributeSchema,
    pub marginals: MarginalTable,
    pub motives: Option<MotiveSpec>,
    pub population: PopulationParams,
    pub demand: DemandParams,
    pub network: Option<NetworkParams>,
    pub humat: HumatParams,
    pub market: MarketParams,
    pub crowdshipping: CrowdshippingParams,
}

impl ScenarioConfig {
    pub fn zone_index(&self, zone_id: &str) -> Option<usize> {
        self.zones.iter().position(|z| z.zone_id == zone_id)
    }

    /// Index of each carrier's depot zone.
    pub fn depot_zones(&self) -> Vec<usize> {
        self.carriers
            .iter()
            .map(|c| self.zone_index(&c.depot_zone).expect("validated depot zone"))
            .collect()
    }

    pub fn channel_index(&self, channel: Channel) -> Option<usize> {
        self.channels.iter().position(|&c| c == channel)
    }

    pub fn employment_attribute(&self) -> usize {
        self.schema.index_of(&self.population.employment_attribute).expect("validated")
    }

    pub fn employed_category(&self) -> usize {
        self.schema
            .category_index(self.employment_attribute(), &self.population.employed_category)
            .expect("validated")
    }

    pub fn income_attribute(&self) -> usize {
        self.schema.index_of(&self.population.income_attribute).expect("validated")
    }

    /// Income multiplier per income category, in schema order.
    pub fn income_multipliers(&self) -> Vec<f64> {
        let attr = &self.schema.attributes[self.income_attribute()];
        attr.categories
            .iter()
            .map(|c| self.demand.income_multipliers[c])
            .collect()
    }

    /// Normalized similarity weights for one network layer.
    pub fn similarity_weights(&self, layer: LayerKind) -> Option<SimilarityWeights> {
        let net = self.network.as_ref()?;
        SimilarityWeights::from_named(&self.schema, &net.layer(layer).weights).ok()
    }

    /// Cross-checks that only matter once a run is requested: a
    /// `parcel_locker` catalog needs lockers, and the social layer needs
    /// motives, priors and network parameters unless running freight-only.
    pub fn validate_for_run(&self, freight_only: bool) -> Result<(), ScenarioError> {
        ensure(
            self.channel_index(Channel::ParcelLocker).is_none() || !self.lockers.is_empty(),
            "lockers",
            || "channel catalog offers parcel_locker but the scenario defines no lockers".into(),
        )?;
        if !freight_only {
            ensure(self.motives.is_some(), "tables.motives", || "motives and priors are required unless running freight-only".into())?;
            ensure(self.network.is_some(), "network", || "network parameters are required unless running freight-only".into())?;
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ScenarioError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()),
            message: e.to_string(),
        })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ScenarioError> {
    let io_err = |source| ScenarioError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(e.into()))?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Serialize, Deserialize)]
struct MarginalRow {
    attribute: String,
    category: String,
    count: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SeedPairRow {
    attribute_a: String,
    category_a: String,
    attribute_b: String,
    category_b: String,
    weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MotiveRow {
    motive: String,
    group: MotiveGroup,
    stratum_attribute: String,
    stratum_category: String,
    importance_mean: f64,
    importance_sd: f64,
    #[serde(default)]
    distribution: Option<ImportanceShape>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorRow {
    motive: String,
    alternative: Channel,
    eval_mean: f64,
    eval_sd: f64,
}

const ALL_STRATA: &str = "all";

/// Loads and validates a scenario file and its sibling tables.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = read_text(path)?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.to_path_buf(),
        line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1),
        message: e.message().to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let table = |name: &str| dir.join(name);

    let zones: Vec<Zone> = read_rows(&table(&file.tables.zones))?;
    let carriers: Vec<Carrier> = read_rows(&table(&file.tables.carriers))?;
    let lockers = match &file.tables.lockers {
        Some(name) => read_rows::<LockerRow>(&table(name))?
            .into_iter()
            .map(|r| {
                let availability = r
                    .availability_pattern
                    .chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        other => Err(ScenarioError::validation(
                            "lockers.availability_pattern",
                            format!("locker {}: `{other}` is not 0 or 1", r.locker_id),
                        )),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(LockerSpec { locker_id: r.locker_id, zone: r.zone, lat: r.lat, lon: r.lon, capacity: r.capacity, availability })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?,
        None => Vec::new(),
    };

    let (schema, counts) = build_schema(read_rows::<MarginalRow>(&table(&file.tables.marginals))?)?;
    let pair_seeds = match &file.tables.seed_pairs {
        Some(name) => build_pair_seeds(&schema, read_rows(&table(name))?)?,
        None => Vec::new(),
    };
    let marginals = MarginalTable { counts, pair_seeds };

    let motives = match (&file.tables.motives, &file.tables.priors) {
        (Some(m), Some(p)) => Some(build_motives(&schema, &file.channels, read_rows(&table(m))?, read_rows(&table(p))?)?),
        (None, None) => None,
        _ => {
            return Err(ScenarioError::validation(
                "tables",
                "motives and priors tables must be given together",
            ))
        }
    };

    let config = ScenarioConfig {
        name: file.name,
        day_count: file.day_count,
        seed: file.seed,
        channels: file.channels,
        tables: file.tables,
        zones,
        carriers,
        lockers,
        schema,
        marginals,
        motives,
        population: file.population,
        demand: file.demand,
        network: file.network,
        humat: file.humat,
        market: file.market,
        crowdshipping: file.crowdshipping,
    };
    validate(&config)?;
    Ok(config)
}

fn build_schema(rows: Vec<MarginalRow>) -> Result<(AttributeSchema, Vec<Vec<f64>>), ScenarioError> {
    let mut schema = AttributeSchema::default();
    let mut counts: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let a = match schema.index_of(&r.attribute) {
            Some(a) => a,
            None => {
                schema.attributes.push(Attribute { name: r.attribute.clone(), categories: Vec::new() });
                counts.push(Vec::new());
                schema.attributes.len() - 1
            }
        };
        ensure(schema.category_index(a, &r.category).is_none(), "marginals", || {
            format!("duplicate category {}/{}", r.attribute, r.category)
        })?;
        schema.attributes[a].categories.push(r.category);
        counts[a].push(r.count);
    }
    Ok((schema, counts))
}

fn build_pair_seeds(schema: &AttributeSchema, rows: Vec<SeedPairRow>) -> Result<Vec<PairSeed>, ScenarioError> {
    let resolve = |attr: &str, cat: &str| -> Result<(usize, usize), ScenarioError> {
        let a = schema
            .index_of(attr)
            .ok_or_else(|| ScenarioError::validation("seed_pairs", format!("unknown attribute `{attr}`")))?;
        let c = schema
            .category_index(a, cat)
            .ok_or_else(|| ScenarioError::validation("seed_pairs", format!("unknown category `{attr}/{cat}`")))?;
        Ok((a, c))
    };
    rows.into_iter()
        .map(|r| {
            let (attribute_a, category_a) = resolve(&r.attribute_a, &r.category_a)?;
            let (attribute_b, category_b) = resolve(&r.attribute_b, &r.category_b)?;
            ensure(attribute_a != attribute_b, "seed_pairs", || "pair must join two different attributes".into())?;
            ensure(r.weight.is_finite() && r.weight >= 0.0, "seed_pairs.weight", || format!("{} is negative", r.weight))?;
            Ok(PairSeed { attribute_a, category_a, attribute_b, category_b, weight: r.weight })
        })
        .collect()
}

fn build_motives(
    schema: &AttributeSchema,
    channels: &[Channel],
    rows: Vec<MotiveRow>,
    priors: Vec<PriorRow>,
) -> Result<MotiveSpec, ScenarioError> {
    let mut motives: Vec<Motive> = Vec::new();
    let mut rules = Vec::new();
    for r in rows {
        let m = match motives.iter().position(|m| m.name == r.motive) {
            Some(m) => {
                ensure(motives[m].group == r.group, "motives.group", || {
                    format!("motive `{}` listed under several groups", r.motive)
                })?;
                m
            }
            None => {
                motives.push(Motive { name: r.motive.clone(), group: r.group });
                motives.len() - 1
            }
        };
        let stratum = if r.stratum_attribute == ALL_STRATA {
            None
        } else {
            let a = schema.index_of(&r.stratum_attribute).ok_or_else(|| {
                ScenarioError::validation("motives.stratum_attribute", format!("unknown attribute `{}`", r.stratum_attribute))
            })?;
            let c = schema.category_index(a, &r.stratum_category).ok_or_else(|| {
                ScenarioError::validation(
                    "motives.stratum_category",
                    format!("unknown category `{}/{}`", r.stratum_attribute, r.stratum_category),
                )
            })?;
            Some((a, c))
        };
        rules.push(ImportanceRule {
            motive: m,
            stratum,
            mean: r.importance_mean,
            sd: r.importance_sd,
            shape: r.distribution.unwrap_or_default(),
        });
    }

    let mut table: Vec<Vec<Option<EvaluationPrior>>> = vec![vec![None; channels.len()]; motives.len()];
    for p in priors {
        let m = motives.iter().position(|m| m.name == p.motive).ok_or_else(|| {
            ScenarioError::validation("priors.motive", format!("unknown motive `{}`", p.motive))
        })?;
        // Priors for channels outside the catalog are ignored.
        if let Some(a) = channels.iter().position(|&c| c == p.alternative) {
            table[m][a] = Some(EvaluationPrior { mean: p.eval_mean, sd: p.eval_sd });
        }
    }
    let priors = table
        .into_iter()
        .enumerate()
        .map(|(m, row)| {
            row.into_iter()
                .enumerate()
                .map(|(a, p)| {
                    p.ok_or_else(|| {
                        ScenarioError::validation(
                            "priors",
                            format!("no prior for motive `{}` and alternative `{}`", motives[m].name, channels[a]),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MotiveSpec { motives, rules, priors })
}

fn validate(c: &ScenarioConfig) -> Result<(), ScenarioError> {
    ensure(!c.name.trim().is_empty(), "name", || "must not be empty".into())?;
    ensure(c.day_count >= 1, "day_count", || "must be at least 1".into())?;

    ensure(!c.channels.is_empty(), "channels", || "channel catalog is empty".into())?;
    ensure(c.channels.contains(&Channel::HomeCourier), "channels", || {
        "channel catalog must contain home_courier".into()
    })?;
    let unique: BTreeSet<_> = c.channels.iter().collect();
    ensure(unique.len() == c.channels.len(), "channels", || "duplicate channel".into())?;

    ensure(!c.zones.is_empty(), "zones", || "at least one zone is required".into())?;
    let mut ids = BTreeSet::new();
    for z in &c.zones {
        ensure(ids.insert(z.zone_id.as_str()), "zones.zone_id", || format!("duplicate zone `{}`", z.zone_id))?;
        ensure(z.centroid().is_valid(), "zones.lat/lon", || format!("zone `{}` has invalid coordinates", z.zone_id))?;
        ensure(z.population_weight.is_finite() && z.population_weight >= 0.0, "zones.population_weight", || {
            format!("zone `{}` weight {} is negative", z.zone_id, z.population_weight)
        })?;
    }
    ensure(c.zones.iter().any(|z| z.population_weight > 0.0), "zones.population_weight", || {
        "no zone has positive population weight".into()
    })?;

    ensure(!c.carriers.is_empty(), "carriers", || "at least one carrier is required".into())?;
    let mut ids = BTreeSet::new();
    for k in &c.carriers {
        ensure(ids.insert(k.carrier_id.as_str()), "carriers.carrier_id", || format!("duplicate carrier `{}`", k.carrier_id))?;
        ensure((0.0..=1.0).contains(&k.market_share), "carriers.market_share", || {
            format!("carrier `{}` share {} outside [0,1]", k.carrier_id, k.market_share)
        })?;
        ensure(k.success_rate > 0.0 && k.success_rate <= 1.0, "carriers.success_rate", || {
            format!("carrier `{}` success rate {} outside (0,1]", k.carrier_id, k.success_rate)
        })?;
        ensure(c.zone_index(&k.depot_zone).is_some(), "carriers.depot_zone", || {
            format!("carrier `{}` depot zone `{}` does not exist", k.carrier_id, k.depot_zone)
        })?;
        ensure(k.vehicle_capacity >= 1, "carriers.vehicle_capacity", || format!("carrier `{}` capacity is 0", k.carrier_id))?;
    }
    let share_sum: f64 = c.carriers.iter().map(|k| k.market_share).sum();
    ensure((share_sum - 1.0).abs() <= 1e-9, "carriers.market_share", || format!("market_share sum {share_sum} ≠ 1"))?;

    let mut ids = BTreeSet::new();
    for l in &c.lockers {
        ensure(ids.insert(l.locker_id.as_str()), "lockers.locker_id", || format!("duplicate locker `{}`", l.locker_id))?;
        ensure(l.capacity >= 1, "lockers.capacity", || format!("locker `{}` capacity is 0", l.locker_id))?;
        ensure(l.position().is_valid(), "lockers.lat/lon", || format!("locker `{}` has invalid coordinates", l.locker_id))?;
        ensure(c.zone_index(&l.zone).is_some(), "lockers.zone", || format!("locker `{}` zone `{}` does not exist", l.locker_id, l.zone))?;
    }

    validate_population(c)?;
    c.demand.validate(&c.schema.attributes[c.income_attribute()])?;
    if let Some(net) = &c.network {
        net.validate(&c.schema)?;
    }
    c.humat.validate()?;
    c.market.validate(&c.channels)?;
    c.crowdshipping.validate()?;
    if let Some(m) = &c.motives {
        m.validate()?;
    }
    Ok(())
}

fn validate_population(c: &ScenarioConfig) -> Result<(), ScenarioError> {
    let schema = &c.schema;
    ensure(!schema.is_empty(), "marginals", || "no attributes defined".into())?;
    for (a, counts) in schema.attributes.iter().zip(&c.marginals.counts) {
        ensure(a.categories.len() >= 2, "marginals", || format!("attribute `{}` needs at least 2 categories", a.name))?;
        ensure(counts.iter().all(|v| v.is_finite() && *v >= 0.0), "marginals.count", || {
            format!("attribute `{}` has a negative count", a.name)
        })?;
    }
    let total = c.marginals.total();
    ensure(total > 0.0, "marginals.count", || "marginal totals are zero".into())?;
    for (a, counts) in schema.attributes.iter().zip(&c.marginals.counts) {
        let t: f64 = counts.iter().sum();
        ensure((t - total).abs() <= 1e-6 * total.max(1.0), "marginals.count", || {
            format!("attribute `{}` totals {t}, expected {total}", a.name)
        })?;
    }

    let p = &c.population;
    let emp = schema.index_of(&p.employment_attribute).ok_or_else(|| {
        ScenarioError::validation("population.employment_attribute", format!("`{}` is not in the schema", p.employment_attribute))
    })?;
    ensure(schema.category_index(emp, &p.employed_category).is_some(), "population.employed_category", || {
        format!("`{}` is not a category of `{}`", p.employed_category, p.employment_attribute)
    })?;
    ensure(schema.index_of(&p.income_attribute).is_some(), "population.income_attribute", || {
        format!("`{}` is not in the schema", p.income_attribute)
    })?;
    ensure(!p.household_size.is_empty(), "population.household_size", || "must not be empty".into())?;
    ensure(p.household_size.iter().all(|w| w.is_finite() && *w >= 0.0), "population.household_size", || {
        "weights must be nonnegative".into()
    })?;
    ensure(p.household_size.iter().any(|w| *w > 0.0), "population.household_size", || {
        "at least one size needs positive weight".into()
    })?;
    ensure(p.ipf_tol > 0.0, "population.ipf_tol", || "must be positive".into())?;
    ensure(p.ipf_max_iter >= 1, "population.ipf_max_iter", || "must be at least 1".into())?;
    Ok(())
}

/// Writes `config` as `scenario.<name>.toml` plus its tables into `dir`,
/// returning the TOML path.
pub fn save_scenario(config: &ScenarioConfig, dir: &Path) -> Result<PathBuf, ScenarioError> {
    std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io { path: dir.to_path_buf(), source })?;
    // Data built in code may lack a table name; fall back to the defaults.
    let mut tables = config.tables.clone();
    let fill = |slot: &mut Option<String>, present: bool, default: &str| {
        if present && slot.is_none() {
            *slot = Some(default.to_owned());
        }
    };
    fill(&mut tables.lockers, !config.lockers.is_empty(), "lockers.csv");
    fill(&mut tables.seed_pairs, !config.marginals.pair_seeds.is_empty(), "seed_pairs.csv");
    fill(&mut tables.motives, config.motives.is_some(), "motives.csv");
    fill(&mut tables.priors, config.motives.is_some(), "priors.csv");
    let file = ScenarioFile {
        name: config.name.clone(),
        day_count: config.day_count,
        seed: config.seed,
        channels: config.channels.clone(),
        tables: tables.clone(),
        population: config.population.clone(),
        demand: config.demand.clone(),
        network: config.network.clone(),
        humat: config.humat.clone(),
        market: config.market.clone(),
        crowdshipping: config.crowdshipping.clone(),
    };
    let text = toml::to_string(&file).map_err(|e| ScenarioError::validation("scenario", e.to_string()))?;
    let path = dir.join(format!("scenario.{}.toml", config.name));
    std::fs::write(&path, text).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;

    let t = &tables;
    write_rows(&dir.join(&t.zones), &config.zones)?;
    write_rows(&dir.join(&t.carriers), &config.carriers)?;
    if let Some(name) = &t.lockers {
        let rows: Vec<LockerRow> = config
            .lockers
            .iter()
            .map(|l| LockerRow {
                locker_id: l.locker_id.clone(),
                zone: l.zone.clone(),
                lat: l.lat,
                lon: l.lon,
                capacity: l.capacity,
                availability_pattern: l.pattern(),
            })
            .collect();
        write_rows(&dir.join(name), &rows)?;
    }
    let schema = &config.schema;
    let marginals: Vec<MarginalRow> = schema
        .attributes
        .iter()
        .zip(&config.marginals.counts)
        .flat_map(|(a, counts)| {
            a.categories.iter().zip(counts).map(|(cat, &count)| MarginalRow {
                attribute: a.name.clone(),
                category: cat.clone(),
                count,
            })
        })
        .collect();
    write_rows(&dir.join(&t.marginals), &marginals)?;
    if let Some(name) = &t.seed_pairs {
        let label = |a: usize, c: usize| (schema.attributes[a].name.clone(), schema.attributes[a].categories[c].clone());
        let rows: Vec<SeedPairRow> = config
            .marginals
            .pair_seeds
            .iter()
            .map(|p| {
                let (attribute_a, category_a) = label(p.attribute_a, p.category_a);
                let (attribute_b, category_b) = label(p.attribute_b, p.category_b);
                SeedPairRow { attribute_a, category_a, attribute_b, category_b, weight: p.weight }
            })
            .collect();
        write_rows(&dir.join(name), &rows)?;
    }
    if let (Some(spec), Some(mname), Some(pname)) = (&config.motives, &t.motives, &t.priors) {
        let rows: Vec<MotiveRow> = spec
            .rules
            .iter()
            .map(|r| {
                let (stratum_attribute, stratum_category) = match r.stratum {
                    Some((a, c)) => (schema.attributes[a].name.clone(), schema.attributes[a].categories[c].clone()),
                    None => (ALL_STRATA.to_string(), ALL_STRATA.to_string()),
                };
                MotiveRow {
                    motive: spec.motives[r.motive].name.clone(),
                    group: spec.motives[r.motive].group,
                    stratum_attribute,
                    stratum_category,
                    importance_mean: r.mean,
                    importance_sd: r.sd,
                    distribution: Some(r.shape),
                }
            })
            .collect();
        write_rows(&dir.join(mname), &rows)?;
        let mut priors = Vec::new();
        for (m, row) in spec.priors.iter().enumerate() {
            for (a, p) in row.iter().enumerate() {
                priors.push(PriorRow {
                    motive: spec.motives[m].name.clone(),
                    alternative: config.channels[a],
                    eval_mean: p.mean,
                    eval_sd: p.sd,
                });
            }
        }
        write_rows(&dir.join(pname), &priors)?;
    }
    Ok(path)
}

/// Reads the channel share map used in freight-only mode, in catalog order.
pub(crate) fn shares_in_catalog(shares: &BTreeMap<String, f64>, channels: &[Channel]) -> Vec<f64> {
    if shares.is_empty() {
        return channels.iter().map(|&c| if c == Channel::HomeCourier { 1.0 } else { 0.0 }).collect();
    }
    channels.iter().map(|c| shares.get(c.as_str()).copied().unwrap_or(0.0)).collect()
}
