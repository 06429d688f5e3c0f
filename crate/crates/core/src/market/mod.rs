//! Channel choice resolution: consumer preferences, crowdshipper matching and
//! locker assignment, with home delivery as the fallback.

mod crowd;
mod locker;

pub use crowd::{
    destination_weights, generate_crowdshipper_trips, match_crowdshipping, CrowdMatch, CrowdshipperTrip, OdPattern,
};
pub use locker::{assign_lockers, LockerAssignment, LockerState};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::Parcel;
use crate::humat::HumatAgent;
use crate::popsynth::Population;
use crate::rng::{Categorical, RandomStream};
use crate::scenario::{Channel, LockerSpec, ScenarioError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("household {0} has no decision-maker agent")]
    MissingAgent(u32),
    #[error("freight-only channel shares have no positive weight")]
    NoChannelWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Longest acceptable walk from home to a pickup locker.
    #[serde(default = "default_walk")]
    pub walk_max_km: f64,
    /// Channel shares used when consumer agents are switched off. Empty
    /// means everything goes to home delivery.
    #[serde(default)]
    pub freight_only_shares: BTreeMap<String, f64>,
}

fn default_walk() -> f64 {
    1.5
}

impl Default for MarketParams {
    fn default() -> Self {
        Self { walk_max_km: default_walk(), freight_only_shares: BTreeMap::new() }
    }
}

impl MarketParams {
    pub(crate) fn validate(&self, channels: &[Channel]) -> Result<(), ScenarioError> {
        if !(self.walk_max_km > 0.0 && self.walk_max_km.is_finite()) {
            return Err(ScenarioError::validation("market.walk_max_km", "must be positive"));
        }
        if self.freight_only_shares.is_empty() {
            return Ok(());
        }
        let mut sum = 0.0;
        for (name, &share) in &self.freight_only_shares {
            let channel: Channel = name
                .parse()
                .map_err(|_| ScenarioError::validation("market.freight_only_shares", format!("unknown channel `{name}`")))?;
            if !channels.contains(&channel) {
                return Err(ScenarioError::validation(
                    "market.freight_only_shares",
                    format!("`{name}` is not in the channel catalog"),
                ));
            }
            if !(0.0..=1.0).contains(&share) {
                return Err(ScenarioError::validation("market.freight_only_shares", format!("`{name}` = {share}")));
            }
            sum += share;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::validation("market.freight_only_shares", format!("shares sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdshippingParams {
    /// Daily probability that an employed person offers a trip.
    #[serde(default = "default_participation")]
    pub participation_rate: f64,
    #[serde(default = "default_detour")]
    pub max_detour_km: f64,
    /// Parcels one trip can carry.
    #[serde(default = "default_trip_capacity")]
    pub trip_capacity: u32,
    #[serde(default)]
    pub od_pattern: OdPattern,
}

fn default_participation() -> f64 {
    0.1
}
fn default_detour() -> f64 {
    2.0
}
fn default_trip_capacity() -> u32 {
    1
}

impl Default for CrowdshippingParams {
    fn default() -> Self {
        Self {
            participation_rate: default_participation(),
            max_detour_km: default_detour(),
            trip_capacity: default_trip_capacity(),
            od_pattern: OdPattern::default(),
        }
    }
}

impl CrowdshippingParams {
    pub(crate) fn validate(&self) -> Result<(), ScenarioError> {
        if !(0.0..=1.0).contains(&self.participation_rate) {
            return Err(ScenarioError::validation("crowdshipping.participation_rate", "outside [0,1]"));
        }
        if !(self.max_detour_km >= 0.0 && self.max_detour_km.is_finite()) {
            return Err(ScenarioError::validation("crowdshipping.max_detour_km", "must be nonnegative"));
        }
        if self.trip_capacity == 0 {
            return Err(ScenarioError::validation("crowdshipping.trip_capacity", "must be at least 1"));
        }
        Ok(())
    }
}

/// Tags each parcel with the current choice of its household's decision-maker.
/// `agents` must be aligned with `population.persons`.
pub fn channel_split(
    parcels: &mut [Parcel],
    population: &Population,
    agents: &[HumatAgent],
    channels: &[Channel],
) -> Result<(), MarketError> {
    for p in parcels {
        let agent = population
            .household_index(p.household_id)
            .and_then(|h| population.person_index(population.households[h].decision_maker()))
            .and_then(|i| agents.get(i))
            .ok_or(MarketError::MissingAgent(p.household_id))?;
        p.channel = Some(channels[agent.choice()]);
    }
    Ok(())
}

/// Tags parcels by independent draws from fixed channel shares (catalog order).
pub fn channel_split_fixed(
    parcels: &mut [Parcel],
    shares: &[f64],
    channels: &[Channel],
    rng: &mut RandomStream,
) -> Result<(), MarketError> {
    if parcels.is_empty() {
        return Ok(());
    }
    let dist = Categorical::new(shares).ok_or(MarketError::NoChannelWeight)?;
    for p in parcels {
        p.channel = Some(channels[dist.sample(rng)]);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentDetail {
    Trip(u64),
    /// Locker index into the scenario's locker list.
    Locker(usize),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAssignment {
    pub parcel_id: u64,
    /// Channel that will actually deliver the parcel.
    pub channel: Channel,
    pub detail: AssignmentDetail,
    /// Preferred channel was infeasible; rerouted to home delivery.
    pub fallback: bool,
    /// Channel the consumer asked for.
    pub preferred: Channel,
}

impl ChannelAssignment {
    pub fn detail_label(&self, lockers: &[LockerSpec]) -> String {
        match &self.detail {
            AssignmentDetail::Trip(t) => format!("trip:{t}"),
            AssignmentDetail::Locker(l) => format!("locker:{}", lockers[*l].locker_id),
            AssignmentDetail::None => String::new(),
        }
    }
}

/// Channel-level tallies for one day.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelKpi {
    /// Parcels whose consumers preferred this channel.
    pub tagged: usize,
    /// Parcels delivered through this channel as preferred.
    pub served: usize,
    /// Preferred this channel but rerouted to home delivery.
    pub fallback: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketKpis {
    pub day: u32,
    /// Catalog order.
    pub channels: Vec<(Channel, ChannelKpi)>,
    /// Sum of crowdshipper detours, the extra distance driven for parcels.
    pub detour_km: f64,
    pub locker_assigned: usize,
    /// Capacity of lockers open on this day.
    pub locker_capacity: u64,
    pub fallback_stops: usize,
}

impl MarketKpis {
    /// Locker assignments over open capacity; 0 without capacity.
    pub fn utilization(&self) -> f64 {
        if self.locker_capacity == 0 {
            0.0
        } else {
            self.locker_assigned as f64 / self.locker_capacity as f64
        }
    }
}

/// Aggregates one day of assignments.
///
/// `fallback_stops` counts carrier/zone stops that only exist because of
/// rerouted parcels.
pub fn market_kpis(
    day: u32,
    assignments: &[ChannelAssignment],
    parcels: &[Parcel],
    matches: &[CrowdMatch],
    lockers: &[LockerSpec],
    channels: &[Channel],
) -> MarketKpis {
    let mut per: BTreeMap<Channel, ChannelKpi> = channels.iter().map(|&c| (c, ChannelKpi::default())).collect();
    for a in assignments {
        let k = per.entry(a.preferred).or_default();
        k.tagged += 1;
        if a.fallback {
            k.fallback += 1;
        } else {
            k.served += 1;
        }
    }
    let by_id: BTreeMap<u64, &Parcel> = parcels.iter().map(|p| (p.parcel_id, p)).collect();
    let stop_of = |a: &ChannelAssignment| by_id.get(&a.parcel_id).map(|p| (p.carrier, p.zone));
    let regular: BTreeSet<_> = assignments
        .iter()
        .filter(|a| a.channel == Channel::HomeCourier && !a.fallback)
        .filter_map(stop_of)
        .collect();
    let fallback_stops = assignments
        .iter()
        .filter(|a| a.fallback)
        .filter_map(stop_of)
        .collect::<BTreeSet<_>>()
        .difference(&regular)
        .count();
    MarketKpis {
        day,
        channels: channels.iter().map(|c| (*c, per.remove(c).unwrap_or_default())).collect(),
        detour_km: matches.iter().map(|m| m.detour_km).sum(),
        locker_assigned: assignments.iter().filter(|a| matches!(a.detail, AssignmentDetail::Locker(_))).count(),
        locker_capacity: lockers.iter().filter(|l| l.available_on(day)).map(|l| u64::from(l.capacity)).sum(),
        fallback_stops,
    }
}

pub const MARKET_KPI_HEADER: [&str; 9] =
    ["day", "channel", "tagged", "served", "fallback", "detour_km", "locker_capacity", "utilization", "fallback_stops"];

/// One row per channel; distance, capacity and stop columns are filled on
/// the channel they describe and 0 elsewhere.
pub fn write_market_rows<W: Write>(out: &mut csv::Writer<W>, kpi: &MarketKpis) -> csv::Result<()> {
    for (channel, k) in &kpi.channels {
        let (detour, capacity, utilization, stops) = match channel {
            Channel::Crowdshipping => (kpi.detour_km, 0, 0.0, 0),
            Channel::ParcelLocker => (0.0, kpi.locker_capacity, kpi.utilization(), 0),
            Channel::HomeCourier => (0.0, 0, 0.0, kpi.fallback_stops),
        };
        out.write_record([
            kpi.day.to_string(),
            channel.to_string(),
            k.tagged.to_string(),
            k.served.to_string(),
            k.fallback.to_string(),
            detour.to_string(),
            capacity.to_string(),
            utilization.to_string(),
            stops.to_string(),
        ])?;
    }
    Ok(())
}
