//! Courier tours for home deliveries: zone stops, capacity chunking,
//! nearest-neighbour construction and 2-opt improvement.

use std::collections::BTreeMap;
use std::io::Write;

use crate::demand::Parcel;
use crate::rng::RandomStream;
use crate::scenario::Carrier;

/// Moves must shorten a tour by more than this to be applied.
pub const TWO_OPT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    /// Zone index.
    pub zone: usize,
    /// Ascending parcel ids dropped here.
    pub parcels: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub tour_id: u64,
    /// Carrier index.
    pub carrier: usize,
    pub day: u32,
    /// Depot zone index; tours start and end here.
    pub depot: usize,
    pub stops: Vec<Stop>,
    pub total_distance_km: f64,
    /// Delivery result per parcel, in stop order; empty until simulated.
    pub outcomes: Vec<(u64, bool)>,
}

impl Tour {
    pub fn parcel_count(&self) -> usize {
        self.stops.iter().map(|s| s.parcels.len()).sum()
    }

    /// Leg lengths: depot to the first stop, between stops, and back.
    pub fn legs(&self, dist: &[Vec<f64>]) -> Vec<f64> {
        let zones = self.stops.iter().map(|s| s.zone);
        let from = std::iter::once(self.depot).chain(zones.clone());
        let to = zones.chain(std::iter::once(self.depot));
        from.zip(to).map(|(a, b)| dist[a][b]).collect()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|(_, ok)| !ok).count()
    }
}

/// Closed-route length depot → order → depot.
pub fn route_length(order: &[usize], depot: usize, dist: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut at = depot;
    for &z in order {
        total += dist[at][z];
        at = z;
    }
    total + dist[at][depot]
}

/// Visits `zones` greedily from the depot; distance ties go to the smaller
/// `tie_key`.
pub fn nearest_neighbor_order<K: Ord>(zones: &[usize], depot: usize, dist: &[Vec<f64>], tie_key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut left: Vec<usize> = zones.to_vec();
    let mut order = Vec::with_capacity(left.len());
    let mut at = depot;
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            let (d, bd) = (dist[at][left[k]], dist[at][left[best]]);
            if d < bd || (d == bd && tie_key(left[k]) < tie_key(left[best])) {
                best = k;
            }
        }
        at = left.swap_remove(best);
        order.push(at);
    }
    order
}

/// Best-improvement 2-opt with the depot fixed at both ends. Returns the
/// improved order; its length never exceeds the input's.
pub fn two_opt_order(order: &[usize], depot: usize, dist: &[Vec<f64>]) -> Vec<usize> {
    let mut route = order.to_vec();
    let n = route.len();
    if n < 2 {
        return route;
    }
    let at = |route: &[usize], k: isize| if k < 0 || k as usize >= n { depot } else { route[k as usize] };
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n - 1 {
            let a = at(&route, i as isize - 1);
            for j in i + 1..n {
                let b = at(&route, j as isize + 1);
                let delta = dist[a][route[j]] + dist[route[i]][b] - dist[a][route[i]] - dist[route[j]][b];
                if delta < -TWO_OPT_TOL && best.is_none_or(|(_, _, bd)| delta < bd) {
                    best = Some((i, j, delta));
                }
            }
        }
        match best {
            Some((i, j, _)) => route[i..=j].reverse(),
            None => return route,
        }
    }
}

/// Applies [`two_opt_order`] to a tour, keeping its stops and parcels.
pub fn two_opt(tour: &Tour, dist: &[Vec<f64>]) -> Tour {
    let order: Vec<usize> = (0..tour.stops.len()).collect();
    let zones: Vec<usize> = tour.stops.iter().map(|s| s.zone).collect();
    // Route over stop positions so repeated zones stay distinct.
    let local: Vec<Vec<f64>> = {
        let mut points = zones.clone();
        points.push(tour.depot);
        points.iter().map(|&a| points.iter().map(|&b| dist[a][b]).collect()).collect()
    };
    let improved = two_opt_order(&order, zones.len(), &local);
    let stops: Vec<Stop> = improved.iter().map(|&k| tour.stops[k].clone()).collect();
    let zone_order: Vec<usize> = stops.iter().map(|s| s.zone).collect();
    Tour { stops, total_distance_km: route_length(&zone_order, tour.depot, dist), ..tour.clone() }
}

/// Builds the day's tours for home deliveries.
///
/// Per carrier, parcels are grouped into one stop per zone, stops are
/// ordered nearest-neighbour from the depot and cut into tours of at most
/// `vehicle_capacity` parcels (a stop larger than the remaining room is
/// split), and each tour is routed nearest-neighbour and then 2-opt.
pub fn build_tours(
    parcels: &[&Parcel],
    carriers: &[Carrier],
    depot_zones: &[usize],
    dist: &[Vec<f64>],
    zone_ids: &[String],
    day: u32,
    next_tour_id: &mut u64,
) -> Vec<Tour> {
    let mut by_carrier: BTreeMap<usize, BTreeMap<usize, Vec<u64>>> = BTreeMap::new();
    for p in parcels {
        let c = p.carrier.expect("carrier allocated before scheduling");
        by_carrier.entry(c).or_default().entry(p.zone).or_default().push(p.parcel_id);
    }
    let tie = |z: usize| zone_ids[z].clone();
    let mut tours = Vec::new();
    for (carrier, stops) in by_carrier {
        let depot = depot_zones[carrier];
        let capacity = carriers[carrier].vehicle_capacity as usize;
        let mut stops: BTreeMap<usize, Vec<u64>> = stops;
        for ids in stops.values_mut() {
            ids.sort_unstable();
        }
        let zones: Vec<usize> = stops.keys().copied().collect();
        let mut chunks: Vec<Vec<Stop>> = vec![Vec::new()];
        let mut room = capacity;
        for z in nearest_neighbor_order(&zones, depot, dist, tie) {
            let mut ids: &[u64] = &stops[&z];
            while !ids.is_empty() {
                if room == 0 {
                    chunks.push(Vec::new());
                    room = capacity;
                }
                let take = ids.len().min(room);
                chunks.last_mut().expect("non-empty").push(Stop { zone: z, parcels: ids[..take].to_vec() });
                ids = &ids[take..];
                room -= take;
            }
        }
        for chunk in chunks.into_iter().filter(|c| !c.is_empty()) {
            let zones: Vec<usize> = chunk.iter().map(|s| s.zone).collect();
            let nn = nearest_neighbor_order(&zones, depot, dist, tie);
            // A zone appears at most once per tour: splitting only happens at
            // tour boundaries.
            let mut by_zone: BTreeMap<usize, Stop> = chunk.into_iter().map(|s| (s.zone, s)).collect();
            let routed: Vec<Stop> = nn.iter().map(|z| by_zone.remove(z).expect("stop present")).collect();
            let seed = Tour {
                tour_id: *next_tour_id,
                carrier,
                day,
                depot,
                total_distance_km: route_length(&nn, depot, dist),
                stops: routed,
                outcomes: Vec::new(),
            };
            *next_tour_id += 1;
            tours.push(two_opt(&seed, dist));
        }
    }
    tours
}

/// Draws delivery outcomes. With `success_in_allocation` every parcel
/// succeeds (the rates already shaped allocation); otherwise each parcel
/// succeeds with its carrier's `success_rate`.
pub fn simulate_delivery(tours: &mut [Tour], carriers: &[Carrier], success_in_allocation: bool, rng: &mut RandomStream) {
    for t in tours {
        let rate = carriers[t.carrier].success_rate;
        t.outcomes = t
            .stops
            .iter()
            .flat_map(|s| s.parcels.iter())
            .map(|&id| (id, success_in_allocation || rng.bernoulli(rate)))
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingKpi {
    pub day: u32,
    /// Carrier index; `None` for the all-carrier row.
    pub carrier: Option<usize>,
    pub tours: usize,
    pub parcels: usize,
    pub total_km: f64,
    pub failures: usize,
}

impl SchedulingKpi {
    pub fn parcels_per_tour(&self) -> f64 {
        if self.tours == 0 {
            0.0
        } else {
            self.parcels as f64 / self.tours as f64
        }
    }
}

/// One row per carrier (zeros included) plus an all-carrier row.
pub fn scheduling_kpis(tours: &[Tour], carrier_count: usize, day: u32) -> Vec<SchedulingKpi> {
    let blank = |carrier| SchedulingKpi { day, carrier, tours: 0, parcels: 0, total_km: 0.0, failures: 0 };
    let mut rows: Vec<SchedulingKpi> = (0..carrier_count).map(|c| blank(Some(c))).collect();
    for t in tours {
        let r = &mut rows[t.carrier];
        r.tours += 1;
        r.parcels += t.parcel_count();
        r.total_km += t.total_distance_km;
        r.failures += t.failures();
    }
    let mut all = blank(None);
    for r in &rows {
        all.tours += r.tours;
        all.parcels += r.parcels;
        all.total_km += r.total_km;
        all.failures += r.failures;
    }
    rows.push(all);
    rows
}

pub const SCHEDULING_KPI_HEADER: [&str; 7] = ["day", "carrier", "tours", "parcels", "total_km", "parcels_per_tour", "failures"];

pub fn write_scheduling_rows<W: Write>(out: &mut csv::Writer<W>, rows: &[SchedulingKpi], carriers: &[Carrier]) -> csv::Result<()> {
    for r in rows {
        out.write_record([
            r.day.to_string(),
            r.carrier.map_or_else(|| "all".to_owned(), |c| carriers[c].carrier_id.clone()),
            r.tours.to_string(),
            r.parcels.to_string(),
            r.total_km.to_string(),
            r.parcels_per_tour().to_string(),
            r.failures.to_string(),
        ])?;
    }
    Ok(())
}

pub const TOUR_HEADER: [&str; 7] = ["tour_id", "carrier", "day", "stop_seq", "zone", "parcels", "leg_km"];

/// One row per stop plus a closing row for the return leg to the depot.
pub fn write_tour_rows<W: Write>(
    out: &mut csv::Writer<W>,
    tours: &[Tour],
    carriers: &[Carrier],
    zone_ids: &[String],
    dist: &[Vec<f64>],
) -> csv::Result<()> {
    for t in tours {
        let legs = t.legs(dist);
        let zones = t.stops.iter().map(|s| (s.zone, s.parcels.len())).chain(std::iter::once((t.depot, 0)));
        for (seq, ((zone, n), leg)) in zones.zip(legs).enumerate() {
            out.write_record([
                t.tour_id.to_string(),
                carriers[t.carrier].carrier_id.clone(),
                t.day.to_string(),
                (seq + 1).to_string(),
                zone_ids[zone].clone(),
                n.to_string(),
                leg.to_string(),
            ])?;
        }
    }
    Ok(())
}
