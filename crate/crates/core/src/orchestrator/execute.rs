use std::collections::BTreeMap;

use super::{OrchestratorError, Phase, Setup};
use crate::demand::{allocate_carriers, DeliveryOutcome, Parcel, ParcelStatus};
use crate::humat::{apply_experience, diffusion_round};
use crate::market::{
    assign_lockers, channel_split, channel_split_fixed, destination_weights, generate_crowdshipper_trips,
    market_kpis, match_crowdshipping, AssignmentDetail, ChannelAssignment, CrowdMatch, LockerState, MarketKpis,
};
use crate::scenario::{shares_in_catalog, Channel};
use crate::scheduling::{build_tours, scheduling_kpis, simulate_delivery, SchedulingKpi, Tour};

/// Everything one simulated day produced.
#[derive(Debug, Clone)]
pub struct DayRecord {
    pub day: u32,
    /// Ascending parcel id, final status.
    pub parcels: Vec<Parcel>,
    /// Ascending parcel id.
    pub assignments: Vec<ChannelAssignment>,
    pub tours: Vec<Tour>,
    pub market: MarketKpis,
    pub scheduling: Vec<SchedulingKpi>,
    /// Ascending parcel id.
    pub outcomes: Vec<DeliveryOutcome>,
}

fn fail(module: &'static str) -> impl Fn(String) -> OrchestratorError {
    move |message| OrchestratorError::Module { phase: Phase::Execute, module, message }
}

/// Runs the daily loop: demand, carrier allocation, channel choice,
/// crowdshipping and lockers, courier tours, delivery, experience feedback
/// and one diffusion round.
pub fn execute_phase(setup: &mut Setup<'_>, days: u32) -> Result<Vec<DayRecord>, OrchestratorError> {
    let config = setup.config;
    let channels = &config.channels;
    let shares = shares_in_catalog(&config.market.freight_only_shares, channels);
    let od_weights = destination_weights(
        config.crowdshipping.od_pattern,
        &config.zones,
        &config.carriers,
        &setup.geometry.depot_zones,
    );
    let mut next_parcel = 1u64;
    let mut next_trip = 1u64;
    let mut next_tour = 1u64;
    let mut records = Vec::with_capacity(days as usize);

    for day in 1..=days {
        let stream = setup.root.derive(&format!("day-{day}"));
        let mut parcels = setup.demand.generate(&setup.population, day, &mut next_parcel, &mut stream.derive("demand"));
        let created = parcels.len();
        allocate_carriers(&mut parcels, &config.carriers, config.demand.success_in_allocation, &mut stream.derive("allocation"))
            .map_err(|e| fail("parcel-demand")(e.to_string()))?;

        if setup.freight_only {
            channel_split_fixed(&mut parcels, &shares, channels, &mut stream.derive("split"))
        } else {
            channel_split(&mut parcels, &setup.population, &setup.agents, channels)
        }
        .map_err(|e| fail("parcel-market")(e.to_string()))?;

        let tagged = |c: Channel| parcels.iter().filter(move |p| p.channel == Some(c)).collect::<Vec<&Parcel>>();
        let mut crowd_matches: Vec<CrowdMatch> = Vec::new();
        if channels.contains(&Channel::Crowdshipping) {
            let trips = generate_crowdshipper_trips(
                &setup.population,
                &setup.employed,
                &config.crowdshipping,
                &od_weights,
                &config.zones,
                day,
                &mut next_trip,
                &mut stream.derive("crowdshipping"),
            );
            crowd_matches =
                match_crowdshipping(&tagged(Channel::Crowdshipping), &trips, &setup.geometry.depot_zones, &setup.geometry.dist).0;
        }
        let mut locker_state = LockerState::for_day(&config.lockers, day);
        let locker_hits = assign_lockers(
            &tagged(Channel::ParcelLocker),
            &config.lockers,
            &mut locker_state,
            &setup.geometry.centroids,
            config.market.walk_max_km,
        )
        .0;

        let trip_of: BTreeMap<u64, u64> = crowd_matches.iter().map(|m| (m.parcel_id, m.trip_id)).collect();
        let locker_of: BTreeMap<u64, (usize, f64)> =
            locker_hits.iter().map(|a| (a.parcel_id, (a.locker, a.distance_km))).collect();
        let mut assignments = Vec::with_capacity(parcels.len());
        for p in &mut parcels {
            let preferred = p.channel.ok_or_else(|| fail("parcel-market")(format!("parcel {} has no channel", p.parcel_id)))?;
            let (channel, detail) = if let Some(&trip) = trip_of.get(&p.parcel_id) {
                (Channel::Crowdshipping, AssignmentDetail::Trip(trip))
            } else if let Some(&(locker, _)) = locker_of.get(&p.parcel_id) {
                (Channel::ParcelLocker, AssignmentDetail::Locker(locker))
            } else {
                (Channel::HomeCourier, AssignmentDetail::None)
            };
            p.channel = Some(channel);
            p.advance(ParcelStatus::Scheduled).map_err(|e| fail("parcel-market")(e.to_string()))?;
            assignments.push(ChannelAssignment { parcel_id: p.parcel_id, channel, detail, fallback: channel != preferred, preferred });
        }

        let courier: Vec<&Parcel> = parcels.iter().filter(|p| p.channel == Some(Channel::HomeCourier)).collect();
        let mut tours = build_tours(
            &courier,
            &config.carriers,
            &setup.geometry.depot_zones,
            &setup.geometry.dist,
            &setup.geometry.zone_ids,
            day,
            &mut next_tour,
        );
        simulate_delivery(&mut tours, &config.carriers, config.demand.success_in_allocation, &mut stream.derive("delivery"));
        let courier_count = courier.len();
        let courier_result: BTreeMap<u64, bool> = tours.iter().flat_map(|t| t.outcomes.iter().copied()).collect();

        let mut outcomes = Vec::with_capacity(parcels.len());
        for p in &mut parcels {
            let channel = p.channel.expect("set above");
            let success = match channel {
                Channel::HomeCourier => *courier_result
                    .get(&p.parcel_id)
                    .ok_or_else(|| fail("parcel-scheduling")(format!("parcel {} missing from tours", p.parcel_id)))?,
                Channel::ParcelLocker | Channel::Crowdshipping => true,
            };
            p.advance(if success { ParcelStatus::Delivered } else { ParcelStatus::Failed })
                .map_err(|e| fail("parcel-scheduling")(e.to_string()))?;
            outcomes.push(DeliveryOutcome {
                parcel_id: p.parcel_id,
                household_id: p.household_id,
                channel,
                success,
                locker_distance_km: locker_of.get(&p.parcel_id).map(|&(_, d)| d),
            });
        }

        let finished = parcels.iter().filter(|p| matches!(p.status(), ParcelStatus::Delivered | ParcelStatus::Failed)).count();
        let toured: usize = tours.iter().map(Tour::parcel_count).sum();
        if assignments.len() != created || finished != created || toured != courier_count {
            return Err(fail("orchestrator")(format!(
                "day {day}: parcel conservation broken (created {created}, assigned {}, finished {finished}, toured {toured}/{})",
                assignments.len(),
                courier_count
            )));
        }

        let market = market_kpis(day, &assignments, &parcels, &crowd_matches, &config.lockers, channels);
        let scheduling = scheduling_kpis(&tours, config.carriers.len(), day);

        if !setup.freight_only {
            let spec = config.motives.as_ref().expect("validated for run");
            for o in &outcomes {
                let h = setup.population.household_index(o.household_id).expect("parcel household exists");
                let dm = setup.population.households[h].decision_maker();
                let i = setup.population.person_index(dm).expect("decision-maker exists");
                let alt = config.channel_index(o.channel).expect("delivered channel is in the catalog");
                apply_experience(&mut setup.agents[i], spec, o, alt, config.humat.experience_step, config.market.walk_max_km);
            }
            let network = setup.network.as_ref().expect("built in setup");
            let changed = diffusion_round(&mut setup.agents, network, &config.humat);
            log::debug!("day {day}: {created} parcels, {changed} agents switched channel");
            setup.record_snapshot(format!("day_{day}"));
        } else {
            log::debug!("day {day}: {created} parcels");
        }

        records.push(DayRecord { day, parcels, assignments, tours, market, scheduling, outcomes });
    }
    Ok(records)
}
