use std::path::Path;

use super::{OrchestratorError, Phase, RunOptions};
use crate::demand::DemandModel;
use crate::geo::{distance_matrix, LatLon};
use crate::humat::{choice_shares, choice_shares_by, init_agents, run_diffusion, HumatAgent, SatisfactionKpi};
use crate::popsynth::{fit_ipf, read_population_csv, sample_population, Population};
use crate::rng::RandomStream;
use crate::scenario::ScenarioConfig;
use crate::socnet::{build_network, SocialNetwork};

/// Zone positions and distances shared by the daily modules.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub centroids: Vec<LatLon>,
    pub dist: Vec<Vec<f64>>,
    pub depot_zones: Vec<usize>,
    pub zone_ids: Vec<String>,
}

impl Geometry {
    fn new(config: &ScenarioConfig) -> Self {
        let centroids: Vec<LatLon> = config.zones.iter().map(|z| z.centroid()).collect();
        Self {
            dist: distance_matrix(&centroids),
            centroids,
            depot_zones: config.depot_zones(),
            zone_ids: config.zones.iter().map(|z| z.zone_id.clone()).collect(),
        }
    }
}

/// Everything built before the first simulated day.
pub struct Setup<'a> {
    pub config: &'a ScenarioConfig,
    pub seed: u64,
    pub freight_only: bool,
    pub root: RandomStream,
    pub geometry: Geometry,
    pub population: Population,
    /// Per person index.
    pub employed: Vec<bool>,
    pub demand: DemandModel,
    pub network: Option<SocialNetwork>,
    /// Aligned with `population.persons`; empty in freight-only runs.
    pub agents: Vec<HumatAgent>,
    /// `low`/`high` expected demand of each person's household.
    pub demand_band: Vec<usize>,
    /// Snapshot label and KPI tables, in emission order.
    pub humat_kpis: Vec<(String, Vec<SatisfactionKpi>)>,
    pub calibration_rounds: usize,
}

pub(crate) const DEMAND_BANDS: [&str; 2] = ["low", "high"];

impl Setup<'_> {
    /// Channel shares for `all`, each attribute, and the demand band.
    pub fn humat_snapshot(&self) -> Vec<SatisfactionKpi> {
        let mut kpis = vec![choice_shares(&self.agents, &self.population, &self.config.schema, "all").expect("all")];
        for a in &self.config.schema.attributes {
            kpis.push(choice_shares(&self.agents, &self.population, &self.config.schema, &a.name).expect("schema attribute"));
        }
        let bands: Vec<String> = DEMAND_BANDS.iter().map(|s| s.to_string()).collect();
        kpis.push(choice_shares_by(&self.agents, "demand_band", &bands, |i| self.demand_band[i]));
        kpis
    }

    pub(crate) fn record_snapshot(&mut self, label: String) {
        let kpis = self.humat_snapshot();
        self.humat_kpis.push((label, kpis));
    }
}

/// Fits the joint table and samples persons, or loads them from `population`.
pub(crate) fn synthesize(
    config: &ScenarioConfig,
    seed: u64,
    population: Option<&Path>,
) -> Result<Population, OrchestratorError> {
    let income = Some(config.income_attribute());
    let pop = match population {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| OrchestratorError::io(path, e))?;
            read_population_csv(file, &config.schema, &config.zones, income)
                .map_err(|source| OrchestratorError::PopulationFile { path: path.to_path_buf(), source })?
        }
        None => {
            let p = &config.population;
            let seed_table = config.marginals.seed_table(&config.schema);
            let fit = fit_ipf(&seed_table, &config.marginals.counts, p.ipf_tol, p.ipf_max_iter)
                .map_err(|e| OrchestratorError::module(Phase::Setup, "popsynth", e))?;
            log::debug!("ipf converged in {} sweeps, residual {:e}", fit.iterations, fit.residual);
            let mut rng = RandomStream::new(seed, "lmsim").derive("popsynth");
            sample_population(&fit.table, p.size, &config.zones, &p.household_size, income, &mut rng)
        }
    };
    pop.check_partition(config.zones.len())
        .map_err(|e| OrchestratorError::module(Phase::Setup, "popsynth", e))?;
    Ok(pop)
}

/// Population, demand rates, network and agents, with the initial and the
/// calibrated preference snapshots recorded.
pub fn setup_phase<'a>(config: &'a ScenarioConfig, seed: u64, options: &RunOptions) -> Result<Setup<'a>, OrchestratorError> {
    let root = RandomStream::new(seed, "lmsim");
    let population = synthesize(config, seed, options.population.as_deref())?;
    let (emp_attr, emp_cat) = (config.employment_attribute(), config.employed_category());
    let employed: Vec<bool> = (0..population.persons.len()).map(|i| population.has(i, emp_attr, emp_cat)).collect();

    let demand = DemandModel::calibrate(&population, &config.demand, &config.income_multipliers(), &employed);
    let rates = demand.rates();
    let mean_rate = if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 };
    let demand_band = population
        .persons
        .iter()
        .map(|p| {
            let h = population.household_index(p.household_id).expect("partition checked");
            usize::from(rates[h] > mean_rate)
        })
        .collect();

    let mut setup = Setup {
        config,
        seed,
        freight_only: options.freight_only,
        root: root.clone(),
        geometry: Geometry::new(config),
        population,
        employed,
        demand,
        network: None,
        agents: Vec::new(),
        demand_band,
        humat_kpis: Vec::new(),
        calibration_rounds: 0,
    };
    if options.freight_only {
        return Ok(setup);
    }

    let net_params = config.network.as_ref().expect("validated for run");
    let network = build_network(
        &setup.population,
        &config.zones,
        &config.schema,
        net_params,
        setup.employed.clone(),
        &root.derive("socnet"),
    )
    .map_err(|e| OrchestratorError::module(Phase::Setup, "socnet", e))?;
    let spec = config.motives.as_ref().expect("validated for run");
    setup.agents = init_agents(&setup.population, spec, &config.humat, &mut root.derive("humat"))
        .map_err(|e| OrchestratorError::module(Phase::Setup, "humat", e))?;
    setup.record_snapshot("initial".into());

    let (rounds, quiet) = run_diffusion(&mut setup.agents, &network, &config.humat, config.humat.setup_rounds);
    log::debug!("setup diffusion: {rounds} rounds, settled: {quiet}");
    setup.calibration_rounds = rounds;
    setup.network = Some(network);
    setup.record_snapshot("calibrated".into());
    Ok(setup)
}
