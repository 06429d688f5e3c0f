//! Daily locker capacity and nearest-locker assignment.

use crate::demand::Parcel;
use crate::geo::{great_circle_km, LatLon};
use crate::scenario::LockerSpec;

/// Remaining capacity and availability of every locker on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct LockerState {
    pub day: u32,
    remaining: Vec<u32>,
    available: Vec<bool>,
}

impl LockerState {
    /// Fresh state: full capacity, availability from each locker's calendar.
    pub fn for_day(lockers: &[LockerSpec], day: u32) -> Self {
        Self {
            day,
            remaining: lockers.iter().map(|l| l.capacity).collect(),
            available: lockers.iter().map(|l| l.available_on(day)).collect(),
        }
    }

    pub fn remaining(&self, locker: usize) -> u32 {
        self.remaining[locker]
    }

    pub fn is_available(&self, locker: usize) -> bool {
        self.available[locker]
    }

    fn take(&mut self, locker: usize) {
        self.remaining[locker] = self.remaining[locker].checked_sub(1).expect("locker capacity exhausted");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockerAssignment {
    pub parcel_id: u64,
    /// Index into the locker list.
    pub locker: usize,
    pub distance_km: f64,
}

/// In ascending parcel id, each parcel goes to the nearest open locker with
/// space left within `walk_max_km` of its destination zone centroid (ties to
/// the lower locker id). Returns the assignments and the ids of parcels that
/// found no locker.
pub fn assign_lockers(
    parcels: &[&Parcel],
    lockers: &[LockerSpec],
    state: &mut LockerState,
    zone_centroids: &[LatLon],
    walk_max_km: f64,
) -> (Vec<LockerAssignment>, Vec<u64>) {
    let mut order: Vec<&Parcel> = parcels.to_vec();
    order.sort_by_key(|p| p.parcel_id);
    // Candidate lists depend only on the zone; build them once per zone.
    let mut by_zone: Vec<Option<Vec<(usize, f64)>>> = vec![None; zone_centroids.len()];
    let mut assigned = Vec::new();
    let mut unassigned = Vec::new();
    for p in order {
        let candidates = by_zone[p.zone].get_or_insert_with(|| {
            let home = zone_centroids[p.zone];
            let mut c: Vec<(usize, f64)> = lockers
                .iter()
                .enumerate()
                .map(|(i, l)| (i, great_circle_km(home, l.position())))
                .filter(|&(_, d)| d <= walk_max_km)
                .collect();
            c.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lockers[a.0].locker_id.cmp(&lockers[b.0].locker_id)));
            c
        });
        match candidates.iter().find(|&&(i, _)| state.is_available(i) && state.remaining(i) > 0) {
            Some(&(locker, distance_km)) => {
                state.take(locker);
                assigned.push(LockerAssignment { parcel_id: p.parcel_id, locker, distance_km });
            }
            None => unassigned.push(p.parcel_id),
        }
    }
    (assigned, unassigned)
}
