//! Crowdshipper trips and greedy parcel matching.

use serde::{Deserialize, Serialize};

use super::CrowdshippingParams;
use crate::demand::Parcel;
use crate::popsynth::Population;
use crate::rng::{Categorical, RandomStream};
use crate::scenario::{Carrier, Zone};

/// Slack on the detour bound so that collinear stops are not rejected over
/// rounding in the distance sums.
const DETOUR_SLACK_KM: f64 = 1e-9;

/// Where crowdshippers travel to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdPattern {
    /// Zones weighted by the market share of carriers with a depot there.
    #[default]
    DepotWeighted,
    /// Zones weighted by population.
    PopulationWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdshipperTrip {
    pub trip_id: u64,
    pub person_id: u32,
    pub day: u32,
    /// Zone indices.
    pub origin: usize,
    pub destination: usize,
    pub max_detour_km: f64,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdMatch {
    pub parcel_id: u64,
    pub trip_id: u64,
    pub detour_km: f64,
}

/// Destination weight per zone for the given pattern.
pub fn destination_weights(pattern: OdPattern, zones: &[Zone], carriers: &[Carrier], depot_zones: &[usize]) -> Vec<f64> {
    match pattern {
        OdPattern::PopulationWeighted => zones.iter().map(|z| z.population_weight).collect(),
        OdPattern::DepotWeighted => {
            let mut w = vec![0.0; zones.len()];
            for (c, &z) in carriers.iter().zip(depot_zones) {
                w[z] += c.market_share;
            }
            w
        }
    }
}

/// Each employed person offers one trip with probability `participation_rate`,
/// from the home zone to a zone drawn from `weights` (origin excluded). When
/// no other zone carries weight, population weights are used instead; a
/// single-zone study area produces no trips.
#[allow(clippy::too_many_arguments)]
pub fn generate_crowdshipper_trips(
    population: &Population,
    employed: &[bool],
    params: &CrowdshippingParams,
    weights: &[f64],
    zones: &[Zone],
    day: u32,
    next_trip_id: &mut u64,
    rng: &mut RandomStream,
) -> Vec<CrowdshipperTrip> {
    let per_origin: Vec<Option<Categorical>> = (0..zones.len())
        .map(|origin| {
            let without = |w: &mut Vec<f64>| {
                w[origin] = 0.0;
                Categorical::new(w)
            };
            without(&mut weights.to_vec())
                .or_else(|| without(&mut zones.iter().map(|z| z.population_weight).collect()))
        })
        .collect();
    let mut trips = Vec::new();
    for (person, &is_employed) in population.persons.iter().zip(employed) {
        if !is_employed || !rng.bernoulli(params.participation_rate) {
            continue;
        }
        let Some(dist) = &per_origin[person.zone] else { continue };
        trips.push(CrowdshipperTrip {
            trip_id: *next_trip_id,
            person_id: person.person_id,
            day,
            origin: person.zone,
            destination: dist.sample(rng),
            max_detour_km: params.max_detour_km,
            capacity: params.trip_capacity,
        });
        *next_trip_id += 1;
    }
    trips
}

/// Extra distance for a trip that picks up at `depot` and drops at `stop`.
pub fn detour_km(dist: &[Vec<f64>], origin: usize, depot: usize, stop: usize, destination: usize) -> f64 {
    dist[origin][depot] + dist[depot][stop] + dist[stop][destination] - dist[origin][destination]
}

/// Greedy matching in ascending parcel id. Each parcel takes the feasible
/// trip with the smallest detour (ties to the lower trip id); parcels with
/// no feasible trip are returned unmatched, in ascending id order.
///
/// `depot_zones` maps carrier index to depot zone; `dist` is the zone
/// distance matrix.
pub fn match_crowdshipping(
    parcels: &[&Parcel],
    trips: &[CrowdshipperTrip],
    depot_zones: &[usize],
    dist: &[Vec<f64>],
) -> (Vec<CrowdMatch>, Vec<u64>) {
    let mut order: Vec<&Parcel> = parcels.to_vec();
    order.sort_by_key(|p| p.parcel_id);
    let mut remaining: Vec<u32> = trips.iter().map(|t| t.capacity).collect();
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for p in order {
        let depot = depot_zones[p.carrier.expect("carrier allocated before matching")];
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in trips.iter().enumerate() {
            if remaining[k] == 0 {
                continue;
            }
            let d = detour_km(dist, t.origin, depot, p.zone, t.destination);
            if d > t.max_detour_km + DETOUR_SLACK_KM {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, bd)) => d < bd || (d == bd && t.trip_id < trips[b].trip_id),
            };
            if better {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) => {
                remaining[k] -= 1;
                matched.push(CrowdMatch { parcel_id: p.parcel_id, trip_id: trips[k].trip_id, detour_km: d.max(0.0) });
            }
            None => unmatched.push(p.parcel_id),
        }
    }
    (matched, unmatched)
}
