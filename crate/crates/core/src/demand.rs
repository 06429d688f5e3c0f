//! Daily household parcel demand and carrier allocation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::popsynth::{Attribute, Population};
use crate::rng::{Categorical, RandomStream};
use crate::scenario::{Carrier, Channel, ScenarioError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandParams {
    /// Expected parcels per household per day before multipliers.
    pub base_rate: f64,
    /// Multiplier per income category label.
    pub income_multipliers: BTreeMap<String, f64>,
    /// Added to the household factor once per employed member.
    #[serde(default)]
    pub employment_multiplier: f64,
    /// Whether carrier success rates weight the allocation. When false they
    /// drive failed deliveries instead.
    #[serde(default = "yes")]
    pub success_in_allocation: bool,
}

fn yes() -> bool {
    true
}

impl DemandParams {
    pub(crate) fn validate(&self, income: &Attribute) -> Result<(), ScenarioError> {
        if !(self.base_rate >= 0.0 && self.base_rate.is_finite()) {
            return Err(ScenarioError::validation("demand.base_rate", format!("{} is not a nonnegative rate", self.base_rate)));
        }
        if !(self.employment_multiplier >= 0.0 && self.employment_multiplier.is_finite()) {
            return Err(ScenarioError::validation("demand.employment_multiplier", "must be nonnegative"));
        }
        for c in &income.categories {
            match self.income_multipliers.get(c) {
                Some(m) if *m >= 0.0 && m.is_finite() => {}
                Some(m) => {
                    return Err(ScenarioError::validation("demand.income_multipliers", format!("`{c}` = {m} is negative")))
                }
                None => {
                    return Err(ScenarioError::validation("demand.income_multipliers", format!("missing multiplier for `{c}`")))
                }
            }
        }
        if let Some(extra) = self.income_multipliers.keys().find(|k| !income.categories.contains(k)) {
            return Err(ScenarioError::validation(
                "demand.income_multipliers",
                format!("`{extra}` is not a category of `{}`", income.name),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("parcel {parcel_id}: illegal status change {from} -> {to}")]
    InvalidTransition { parcel_id: u64, from: ParcelStatus, to: ParcelStatus },
    #[error("no carrier has positive allocation weight")]
    NoCarrierWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParcelStatus {
    Created,
    Assigned,
    Scheduled,
    Delivered,
    Failed,
}

impl ParcelStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Created => "created",
            Self::Assigned => "assigned",
            Self::Scheduled => "scheduled",
            Self::Delivered => "delivered",
            Self::Failed => "failed",
        }
    }

    pub fn can_become(self, next: ParcelStatus) -> bool {
        use ParcelStatus::*;
        matches!(
            (self, next),
            (Created, Assigned) | (Assigned, Scheduled) | (Scheduled, Delivered) | (Scheduled, Failed)
        )
    }
}

impl fmt::Display for ParcelStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parcel {
    pub parcel_id: u64,
    pub day: u32,
    pub household_id: u32,
    /// Destination zone index (the household's zone).
    pub zone: usize,
    /// Carrier index, set by allocation.
    pub carrier: Option<usize>,
    pub channel: Option<Channel>,
    status: ParcelStatus,
}

impl Parcel {
    pub fn new(parcel_id: u64, day: u32, household_id: u32, zone: usize) -> Self {
        Self { parcel_id, day, household_id, zone, carrier: None, channel: None, status: ParcelStatus::Created }
    }

    pub fn status(&self) -> ParcelStatus {
        self.status
    }

    pub fn advance(&mut self, next: ParcelStatus) -> Result<(), DemandError> {
        if !self.status.can_become(next) {
            return Err(DemandError::InvalidTransition { parcel_id: self.parcel_id, from: self.status, to: next });
        }
        self.status = next;
        Ok(())
    }
}

/// What a household experienced when one parcel was delivered.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryOutcome {
    pub parcel_id: u64,
    pub household_id: u32,
    pub channel: Channel,
    pub success: bool,
    /// Walking distance to the pickup locker, for locker parcels.
    pub locker_distance_km: Option<f64>,
}

/// Expected daily parcels per household, fixed during setup.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    rates: Vec<f64>,
}

impl DemandModel {
    /// `income_multipliers` is indexed by income category; `employed` by
    /// person index.
    pub fn calibrate(population: &Population, params: &DemandParams, income_multipliers: &[f64], employed: &[bool]) -> Self {
        let rates = population
            .households
            .iter()
            .map(|h| {
                let income = h.income_band.map_or(1.0, |c| income_multipliers[c]);
                let workers = h
                    .members
                    .iter()
                    .filter(|&&m| population.person_index(m).is_some_and(|i| employed[i]))
                    .count();
                params.base_rate * income * (1.0 + params.employment_multiplier * workers as f64)
            })
            .collect();
        Self { rates }
    }

    pub fn from_rates(rates: Vec<f64>) -> Self {
        Self { rates }
    }

    /// Expected parcels per day, aligned with `population.households`.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Draws one day of parcels; ids continue from `next_id`, which is
    /// advanced past the last id issued.
    pub fn generate(&self, population: &Population, day: u32, next_id: &mut u64, rng: &mut RandomStream) -> Vec<Parcel> {
        assert!(day >= 1, "days are numbered from 1");
        let mut parcels = Vec::new();
        for (h, &rate) in population.households.iter().zip(&self.rates) {
            if rate <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate).expect("positive finite rate").sample(rng) as u64;
            for _ in 0..count {
                parcels.push(Parcel::new(*next_id, day, h.household_id, h.zone));
                *next_id += 1;
            }
        }
        parcels
    }
}

/// Carrier weights `share · success` (or plain shares), normalized.
pub fn allocation_weights(carriers: &[Carrier], success_in_allocation: bool) -> Vec<f64> {
    let raw: Vec<f64> = carriers
        .iter()
        .map(|c| if success_in_allocation { c.market_share * c.success_rate } else { c.market_share })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| if total > 0.0 { w / total } else { 0.0 }).collect()
}

/// Assigns each parcel a carrier independently; status becomes `assigned`.
pub fn allocate_carriers(
    parcels: &mut [Parcel],
    carriers: &[Carrier],
    success_in_allocation: bool,
    rng: &mut RandomStream,
) -> Result<(), DemandError> {
    if parcels.is_empty() {
        return Ok(());
    }
    let dist = Categorical::new(&allocation_weights(carriers, success_in_allocation)).ok_or(DemandError::NoCarrierWeight)?;
    for p in parcels {
        p.carrier = Some(dist.sample(rng));
        p.advance(ParcelStatus::Assigned)?;
    }
    Ok(())
}

/// Parcel counts per day, zone and carrier.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandKpis {
    pub total: usize,
    pub per_day: BTreeMap<u32, usize>,
    /// Keyed by zone index.
    pub per_zone: BTreeMap<usize, usize>,
    /// Keyed by carrier index; unallocated parcels are not counted here.
    pub per_carrier: BTreeMap<usize, usize>,
}

pub fn demand_kpis(parcels: &[Parcel]) -> DemandKpis {
    let mut k = DemandKpis { total: parcels.len(), ..Default::default() };
    for p in parcels {
        *k.per_day.entry(p.day).or_default() += 1;
        *k.per_zone.entry(p.zone).or_default() += 1;
        if let Some(c) = p.carrier {
            *k.per_carrier.entry(c).or_default() += 1;
        }
    }
    k
}

impl DemandKpis {
    /// `dimension,key,parcels` with every zone and carrier listed, zeros included.
    pub fn write_csv<W: Write>(&self, out: W, zone_ids: &[String], carrier_ids: &[String], days: u32) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dimension", "key", "parcels"])?;
        w.write_record(["total", "all", &self.total.to_string()])?;
        for d in 1..=days {
            w.write_record(["day", &d.to_string(), &self.per_day.get(&d).copied().unwrap_or(0).to_string()])?;
        }
        for (i, z) in zone_ids.iter().enumerate() {
            w.write_record(["zone", z, &self.per_zone.get(&i).copied().unwrap_or(0).to_string()])?;
        }
        for (i, c) in carrier_ids.iter().enumerate() {
            w.write_record(["carrier", c, &self.per_carrier.get(&i).copied().unwrap_or(0).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
