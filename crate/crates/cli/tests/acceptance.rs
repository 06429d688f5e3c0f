//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line to the
//! real stdout (not the captured test output), then asserts.
//!
//! `cargo test -p lmsim --test acceptance`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lmsim_core::demand::{allocate_carriers, allocation_weights, Parcel, ParcelStatus};
use lmsim_core::geo::{distance_matrix, great_circle_km, LatLon};
use lmsim_core::humat::{
    diffusion_round, diffusion_round_in_order, dissonance_of, satisfaction_of, EvaluationPrior, HumatAgent, HumatParams,
};
use lmsim_core::orchestrator::{self, execute_phase, file_checksum, setup_phase, RunManifest, RunOptions};
use lmsim_core::popsynth::{fit_ipf, JointTable};
use lmsim_core::scenario::{save_scenario, Carrier, LockerSpec};
use lmsim_core::scheduling::{nearest_neighbor_order, two_opt_order};
use lmsim_core::socnet::{similarity, EdgeLayer, LayerKind, SocialNetwork};
use lmsim_core::{load_scenario, Channel, RandomStream, ScenarioConfig};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

const BUNDLED: [&str; 3] = ["crowdshipping_small", "parcel_locker_small", "feedback_sanity"];

fn verdict(id: u8, name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] {id} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/scenarios/{name}/scenario.{name}.toml"))
}

fn bundled(name: &str) -> ScenarioConfig {
    load_scenario(&scenario_path(name)).unwrap()
}

type Row = HashMap<String, String>;

fn read_csv(path: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records().map(|rec| header.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.into(), v.into())).collect()).collect()
}

fn files_in(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
        .collect()
}

// Fuzzed scenarios -----------------------------------------------------------

/// Random but valid variation of a bundled scenario, round-tripped through
/// the scenario files so that the loader's validation applies.
fn fuzz_scenario(k: u64, want_lockers: bool, dir: &Path) -> (ScenarioConfig, bool) {
    let mut rng = RandomStream::new(k, if want_lockers { "fuzz-locker" } else { "fuzz" });
    let mut c = bundled(if want_lockers || k % 2 == 0 { "parcel_locker_small" } else { "crowdshipping_small" });
    let zones = c.zones.len();
    let uniform = |rng: &mut RandomStream, lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();

    c.name = format!("fuzz_{k}");
    c.seed = rng.next_u64() >> 1;
    c.day_count = 1 + rng.index(4) as u32;
    c.population.size = 50 + rng.index(350);
    c.population.household_size = (0..1 + rng.index(4)).map(|_| uniform(&mut rng, 0.1, 1.0)).collect();

    let n_carriers = 1 + rng.index(3);
    let shares: Vec<f64> = (0..n_carriers).map(|_| uniform(&mut rng, 0.1, 1.0)).collect();
    let total: f64 = shares.iter().sum();
    c.carriers = shares
        .iter()
        .enumerate()
        .map(|(i, s)| Carrier {
            carrier_id: format!("c{i}"),
            market_share: s / total,
            success_rate: uniform(&mut rng, 0.3, 1.0),
            depot_zone: c.zones[rng.index(zones)].zone_id.clone(),
            vehicle_capacity: 3 + rng.index(40) as u32,
        })
        .collect();
    // Shares must sum to one after the CSV round trip too.
    let drift: f64 = 1.0 - c.carriers.iter().map(|x| x.market_share).sum::<f64>();
    c.carriers[0].market_share += drift;

    let old_channels = c.channels.clone();
    let mut channels = vec![Channel::HomeCourier];
    if rng.bernoulli(0.5) {
        channels.push(Channel::Crowdshipping);
    }
    if want_lockers || rng.bernoulli(0.5) {
        channels.push(Channel::ParcelLocker);
    }
    c.channels = channels.clone();
    c.lockers = if channels.contains(&Channel::ParcelLocker) {
        (0..1 + rng.index(5))
            .map(|i| {
                let z = &c.zones[rng.index(zones)];
                let pattern_len = rng.index(8);
                LockerSpec {
                    locker_id: format!("L{i}"),
                    zone: z.zone_id.clone(),
                    lat: z.centroid_lat + uniform(&mut rng, -0.004, 0.004),
                    lon: z.centroid_lon + uniform(&mut rng, -0.006, 0.006),
                    capacity: 1 + rng.index(25) as u32,
                    availability: (0..pattern_len).map(|_| rng.bernoulli(0.7)).collect(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    if let Some(spec) = c.motives.as_mut() {
        for row in spec.priors.iter_mut() {
            let old: Vec<EvaluationPrior> = row.clone();
            *row = channels
                .iter()
                .map(|ch| {
                    old_channels.iter().position(|o| o == ch).map_or(EvaluationPrior { mean: 0.2, sd: 0.3 }, |i| old[i])
                })
                .collect();
        }
    }

    c.demand.base_rate = uniform(&mut rng, 0.05, 0.8);
    c.demand.success_in_allocation = rng.bernoulli(0.5);
    c.market.walk_max_km = uniform(&mut rng, 0.3, 3.0);
    c.crowdshipping.participation_rate = uniform(&mut rng, 0.0, 0.3);
    c.crowdshipping.max_detour_km = uniform(&mut rng, 0.5, 3.0);
    c.crowdshipping.trip_capacity = 1 + rng.index(3) as u32;
    let freight_only = rng.bernoulli(0.3);
    if freight_only {
        let raw: Vec<f64> = channels.iter().map(|_| uniform(&mut rng, 0.05, 1.0)).collect();
        let t: f64 = raw.iter().sum();
        c.market.freight_only_shares = channels.iter().zip(&raw).map(|(ch, w)| (ch.to_string(), w / t)).collect();
        let drift = 1.0 - c.market.freight_only_shares.values().sum::<f64>();
        *c.market.freight_only_shares.get_mut("home_courier").unwrap() += drift;
    }

    let path = save_scenario(&c, dir).unwrap();
    (load_scenario(&path).unwrap(), freight_only)
}

// 1 ----------------------------------------------------------------------------

fn run_cli(scenario: &Path, out: &Path) -> f64 {
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_lmsim"))
        .args(["run", "--export-network", "--scenario"])
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
    started.elapsed().as_secs_f64()
}

#[test]
fn c1_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut slowest = 0.0f64;
    let mut compared = 0;
    for name in BUNDLED {
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        slowest = slowest.max(run_cli(&scenario_path(name), &a));
        slowest = slowest.max(run_cli(&scenario_path(name), &b));
        let (fa, fb) = (files_in(&a), files_in(&b));
        if fa.keys().ne(fb.keys()) {
            problems.push(format!("{name}: file sets differ"));
            continue;
        }
        for (file, bytes) in &fa {
            if file != orchestrator::MANIFEST_FILE && bytes != &fb[file] {
                problems.push(format!("{name}: {file} differs"));
            }
        }
        let ma: RunManifest = serde_json::from_slice(&fa[orchestrator::MANIFEST_FILE]).unwrap();
        let mb: RunManifest = serde_json::from_slice(&fb[orchestrator::MANIFEST_FILE]).unwrap();
        if ma.files != mb.files || (ma.scenario.as_str(), ma.seed, &ma.versions) != (mb.scenario.as_str(), mb.seed, &mb.versions) {
            problems.push(format!("{name}: manifests differ beyond timings"));
        }
        for (file, sum) in &ma.files {
            if fa.get(file).map(|b| file_checksum(b)).as_ref() != Some(sum) {
                problems.push(format!("{name}: checksum of {file} does not match"));
            }
        }
        compared += fa.len();
    }
    let persons = bundled("crowdshipping_small").population.size;
    let pass = problems.is_empty() && slowest <= 60.0 && persons >= 1000;
    verdict(
        1,
        "determinism",
        pass,
        &format!("{compared} files compared over 3 fixtures, slowest run {slowest:.2}s ({persons} persons x 5 days) {problems:?}"),
    );
}

// 2 ----------------------------------------------------------------------------

/// Per-day conservation from the in-memory day records; returns parcels seen.
fn conserve(config: &ScenarioConfig, freight_only: bool) -> Result<usize, String> {
    let options = RunOptions { freight_only, ..Default::default() };
    config.validate_for_run(freight_only).map_err(|e| e.to_string())?;
    let mut setup = setup_phase(config, config.seed, &options).map_err(|e| e.to_string())?;
    let records = execute_phase(&mut setup, config.day_count).map_err(|e| e.to_string())?;
    let mut seen = 0;
    for r in &records {
        let created = r.parcels.len();
        let assigned = r.parcels.iter().filter(|p| p.carrier.is_some()).count();
        let ids: BTreeSet<u64> = r.parcels.iter().map(|p| p.parcel_id).collect();
        let channel_ids: BTreeSet<u64> = r.assignments.iter().map(|a| a.parcel_id).collect();
        let delivered = r.parcels.iter().filter(|p| p.status() == ParcelStatus::Delivered).count();
        let failed = r.parcels.iter().filter(|p| p.status() == ParcelStatus::Failed).count();
        let courier = r.assignments.iter().filter(|a| a.channel == Channel::HomeCourier).count();
        let toured: usize = r.tours.iter().map(|t| t.parcel_count()).sum();
        let ok = created == assigned
            && r.assignments.len() == created
            && channel_ids == ids
            && delivered + failed == created
            && courier == toured;
        if !ok {
            return Err(format!(
                "{} day {}: created {created}, assigned {assigned}, channel {}, delivered {delivered} + failed {failed}, courier {courier} vs toured {toured}",
                config.name,
                r.day,
                r.assignments.len()
            ));
        }
        seen += created;
    }
    Ok(seen)
}

#[test]
fn c2_conservation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut parcels = 0;
    for name in BUNDLED {
        let config = bundled(name);
        match conserve(&config, false) {
            Ok(n) => parcels += n,
            Err(e) => problems.push(e),
        }
        // File level: parcels.csv, assignments.csv and the demand total agree.
        let out = tmp.path().join(name);
        orchestrator::run(&config, &RunOptions::default(), &out).unwrap();
        let rows = read_csv(&out.join("parcels.csv"));
        let done = rows.iter().filter(|r| r["status"] == "delivered" || r["status"] == "failed").count();
        let with_carrier = rows.iter().filter(|r| !r["carrier"].is_empty()).count();
        let assignments = read_csv(&out.join("assignments.csv")).len();
        let demand_total: usize = read_csv(&out.join("demand_kpis.csv"))
            .iter()
            .find(|r| r["dimension"] == "total")
            .map(|r| r["parcels"].parse().unwrap())
            .unwrap();
        if [done, with_carrier, assignments, demand_total].iter().any(|&n| n != rows.len()) {
            problems.push(format!("{name} files: {} parcels, {done} finished, {assignments} assigned", rows.len()));
        }
    }
    let mut fuzzed_freight_only = 0;
    for k in 0..50 {
        let (config, freight_only) = fuzz_scenario(k, false, &tmp.path().join(format!("fuzz{k}")));
        fuzzed_freight_only += usize::from(freight_only);
        match conserve(&config, freight_only) {
            Ok(n) => parcels += n,
            Err(e) => problems.push(e),
        }
    }
    verdict(
        2,
        "conservation",
        problems.is_empty(),
        &format!("3 bundled + 50 fuzzed scenarios ({fuzzed_freight_only} freight-only), {parcels} parcels traced {problems:?}"),
    );
}

// 3 ----------------------------------------------------------------------------

fn marginals_of(cells: &[f64], dims: &[usize]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    for (offset, &v) in cells.iter().enumerate() {
        let mut rest = offset;
        for axis in (0..dims.len()).rev() {
            out[axis][rest % dims[axis]] += v;
            rest /= dims[axis];
        }
    }
    out
}

#[test]
fn c3_ipf() {
    let mut rng = RandomStream::new(3, "ipf-acceptance");
    let mut worst = 0.0f64;
    let mut all_converged = true;
    for _ in 0..10 {
        let dims: Vec<usize> = (0..3).map(|_| 2 + rng.index(4)).collect();
        let n: usize = dims.iter().product();
        // Targets come from a hidden table, so they are mutually consistent.
        let hidden: Vec<f64> = (0..n).map(|_| 1.0 + 99.0 * rng.next_f64()).collect();
        let targets = marginals_of(&hidden, &dims);
        let seed = JointTable::new(dims.clone(), (0..n).map(|_| 0.1 + rng.next_f64()).collect());
        match fit_ipf(&seed, &targets, 1e-6, 10_000) {
            Ok(fit) => {
                let fitted = marginals_of(fit.table.cells(), &dims);
                for (f, t) in fitted.iter().flatten().zip(targets.iter().flatten()) {
                    worst = worst.max((f - t).abs());
                }
            }
            Err(_) => all_converged = false,
        }
    }

    // Independent seed: the fit is the outer product of the marginals.
    let rows = [30.0, 70.0];
    let cols = [40.0, 60.0];
    let fit = fit_ipf(&JointTable::filled(vec![2, 2], 1.0), &[rows.to_vec(), cols.to_vec()], 1e-12, 100).unwrap();
    let product: Vec<f64> = rows.iter().flat_map(|r| cols.iter().map(move |c| r * c / 100.0)).collect();
    let exact = fit.table.cells() == product.as_slice();

    verdict(
        3,
        "ipf",
        all_converged && worst <= 1e-6 && exact,
        &format!("max marginal error {worst:.2e} over 10 random 3-attribute tables; 2x2 product fit {:?} exact={exact}", fit.table.cells()),
    );
}

// 4 ----------------------------------------------------------------------------

#[test]
fn c4_allocation() {
    let carrier = |id: &str, share: f64, success: f64| Carrier {
        carrier_id: id.into(),
        market_share: share,
        success_rate: success,
        depot_zone: "Z1".into(),
        vehicle_capacity: 120,
    };
    let cases = [
        (vec![carrier("a", 0.5, 0.9), carrier("b", 0.3, 0.6), carrier("c", 0.2, 0.95)], true),
        (vec![carrier("a", 0.5, 0.9), carrier("b", 0.3, 0.6), carrier("c", 0.2, 0.95)], false),
        (vec![carrier("a", 0.7, 0.5), carrier("b", 0.3, 1.0)], true),
    ];
    let n = 10_000;
    let mut pass = true;
    let mut details = Vec::new();
    for (k, (carriers, sia)) in cases.iter().enumerate() {
        let raw: Vec<f64> =
            carriers.iter().map(|c| if *sia { c.market_share * c.success_rate } else { c.market_share }).collect();
        let total: f64 = raw.iter().sum();
        let expected: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let lib = allocation_weights(carriers, *sia);
        let lib_total: f64 = lib.iter().sum();
        let weights_ok = lib.iter().zip(&expected).all(|(w, e)| (w / lib_total - e).abs() < 1e-12);

        let mut parcels: Vec<Parcel> = (1..=n as u64).map(|id| Parcel::new(id, 1, 1, 0)).collect();
        allocate_carriers(&mut parcels, carriers, *sia, &mut RandomStream::new(40 + k as u64, "allocation")).unwrap();
        let mut counts = vec![0usize; carriers.len()];
        for p in &parcels {
            counts[p.carrier.unwrap()] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let max_dev = freq.iter().zip(&expected).map(|(f, e)| (f - e).abs()).fold(0.0, f64::max);
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&o, e)| {
                let exp = e * n as f64;
                (o as f64 - exp).powi(2) / exp
            })
            .sum();
        let p = 1.0 - ChiSquared::new((carriers.len() - 1) as f64).unwrap().cdf(chi2);
        pass &= weights_ok && max_dev <= 0.02 && p > 0.01;
        details.push(format!("case {k}: max dev {max_dev:.4}, chi2 p {p:.3}"));
    }
    verdict(4, "allocation", pass, &details.join("; "));
}

// 5 ----------------------------------------------------------------------------

#[test]
fn c5_homophily() {
    let mut config = bundled("crowdshipping_small");
    config.population.size = 500;
    let setup = setup_phase(&config, config.seed, &RunOptions::default()).unwrap();
    let network = setup.network.as_ref().unwrap();
    let params = config.network.as_ref().unwrap();
    let persons = &setup.population.persons;
    let dist = &setup.geometry.dist;

    let mut pass = true;
    let mut details = Vec::new();
    for kind in [LayerKind::Friendship, LayerKind::Job, LayerKind::Neighborhood] {
        let weights = config.similarity_weights(kind).unwrap();
        let members: Vec<usize> = match kind {
            LayerKind::Job => (0..persons.len()).filter(|&i| setup.employed[i]).collect(),
            _ => (0..persons.len()).collect(),
        };
        let m = members.len();
        let sim = |a: usize, b: usize| {
            let (pa, pb) = (&persons[a], &persons[b]);
            similarity(&pa.attributes, &pb.attributes, &weights, dist[pa.zone][pb.zone], params.d_half_km).unwrap()
        };
        // Similarity between member slots, so that relabelling is a permutation.
        let table: Vec<Vec<f64>> = (0..m).map(|x| (0..m).map(|y| if x == y { 0.0 } else { sim(members[x], members[y]) }).collect()).collect();
        let slot: HashMap<usize, usize> = members.iter().enumerate().map(|(s, &i)| (i, s)).collect();
        let edges: Vec<(usize, usize)> = network.layer(kind).edges().map(|(i, j, _)| (slot[&i], slot[&j])).collect();
        let pairs = (m * (m - 1) / 2) as f64;
        let all_sum: f64 = (0..m).map(|x| table[x][x + 1..].iter().sum::<f64>()).sum();
        let stat = |label: &[usize]| {
            let edge_sum: f64 = edges.iter().map(|&(x, y)| table[label[x]][label[y]]).sum();
            let e = edges.len() as f64;
            edge_sum / e - (all_sum - edge_sum) / (pairs - e)
        };
        let identity: Vec<usize> = (0..m).collect();
        let observed = stat(&identity);
        let mut rng = RandomStream::new(5, kind.as_str());
        let permutations = 999;
        let mut at_least = 0;
        let mut label = identity.clone();
        for _ in 0..permutations {
            for i in (1..m).rev() {
                label.swap(i, rng.index(i + 1));
            }
            if stat(&label) >= observed {
                at_least += 1;
            }
        }
        let p = (1 + at_least) as f64 / (1 + permutations) as f64;
        pass &= observed > 0.0 && p < 0.01 && !edges.is_empty();
        details.push(format!("{}: {} edges, edge-minus-nonedge similarity {observed:.4}, p {p:.4}", kind.as_str(), edges.len()));
    }
    verdict(5, "homophily", pass, &details.join("; "));
}

// 6 ----------------------------------------------------------------------------

/// Plain re-statement of one synchronous round, used as the oracle.
#[derive(Clone, Debug, PartialEq)]
struct OracleAgent {
    w: Vec<f64>,
    e: Vec<Vec<f64>>,
    choice: usize,
    persuasion: f64,
}

fn s_of(a: &OracleAgent, alt: usize) -> f64 {
    let tw: f64 = a.w.iter().sum();
    if tw == 0.0 {
        0.0
    } else {
        a.w.iter().zip(&a.e).map(|(w, r)| w * r[alt]).sum::<f64>() / tw
    }
}

fn d_of(a: &OracleAgent, alt: usize) -> f64 {
    let p: f64 = a.w.iter().zip(&a.e).filter(|(_, r)| r[alt] > 0.0).map(|(w, r)| w * r[alt]).sum();
    let n: f64 = a.w.iter().zip(&a.e).filter(|(_, r)| r[alt] < 0.0).map(|(w, r)| w * -r[alt]).sum();
    if p + n == 0.0 {
        0.0
    } else {
        2.0 * p.min(n) / (p + n)
    }
}

fn best(a: &OracleAgent) -> usize {
    let k = a.e[0].len();
    (1..k).fold(0, |b, x| {
        let (sx, sb) = (s_of(a, x), s_of(a, b));
        if sx > sb || (sx == sb && d_of(a, x) < d_of(a, b)) {
            x
        } else {
            b
        }
    })
}

fn oracle_round(agents: &[OracleAgent], adj: &[Vec<usize>], p: &HumatParams) -> (Vec<OracleAgent>, usize) {
    let k = agents[0].e[0].len();
    // (target, kind, source, alternative, persuasion, values)
    let mut updates: Vec<(usize, u8, usize, usize, f64, Vec<f64>)> = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        let own = s_of(a, a.choice);
        if d_of(a, a.choice) < p.dissonance_threshold {
            continue;
        }
        let dissatisfied = own < p.aspiration || (0..k).any(|x| x != a.choice && s_of(a, x) > own);
        if dissatisfied {
            let alter = adj[i].iter().copied().fold(None::<usize>, |b, j| match b {
                None => Some(j),
                Some(b) => {
                    let (pj, pb) = (agents[j].persuasion, agents[b].persuasion);
                    let (sj, sb) = (s_of(&agents[j], agents[j].choice), s_of(&agents[b], agents[b].choice));
                    Some(if pj > pb || (pj == pb && (sj > sb || (sj == sb && j < b))) { j } else { b })
                }
            });
            if let Some(j) = alter {
                for alt in 0..k {
                    updates.push((i, 0, j, alt, agents[j].persuasion, agents[j].e.iter().map(|r| r[alt]).collect()));
                }
            }
        } else {
            for &j in &adj[i] {
                updates.push((j, 1, i, a.choice, a.persuasion, a.e.iter().map(|r| r[a.choice]).collect()));
            }
        }
    }
    updates.sort_by_key(|u| (u.0, u.1, u.2, u.3));
    let mut next = agents.to_vec();
    for (t, _, _, alt, pers, values) in updates {
        for (row, v) in next[t].e.iter_mut().zip(values) {
            row[alt] = ((1.0 - p.learning_rate) * row[alt] + p.learning_rate * pers * v).clamp(-1.0, 1.0);
        }
    }
    let mut changed = 0;
    for a in next.iter_mut() {
        let c = best(a);
        changed += usize::from(c != a.choice);
        a.choice = c;
    }
    (next, changed)
}

fn to_lib(o: &[OracleAgent]) -> Vec<HumatAgent> {
    o.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut agent = HumatAgent::new(i as u32 + 1, a.w.clone(), a.e.clone(), a.persuasion);
            agent.set_choice(a.choice);
            agent
        })
        .collect()
}

fn net_of(n: usize, edges: &[(usize, usize)]) -> SocialNetwork {
    let layer = EdgeLayer::from_edges(n, edges.iter().map(|&(i, j)| (i, j, 1.0)));
    SocialNetwork::new((1..=n as u32).collect(), [layer, EdgeLayer::empty(n), EdgeLayer::empty(n)], [1.0; 3])
}

fn same_state(lib: &[HumatAgent], oracle: &[OracleAgent]) -> bool {
    lib.iter().zip(oracle).all(|(l, o)| l.choice() == o.choice && l.evaluations() == o.e.as_slice())
}

#[test]
fn c6_humat_algebra() {
    let mut problems = Vec::new();

    // Hand examples. 0.2 is not representable: the oracle is the defining
    // formula evaluated in the same binary arithmetic, and the result must be
    // the double nearest to, or one step below, the decimal value.
    let s = satisfaction_of(&[2.0, 1.0], &[vec![0.5], vec![-0.4]], 0);
    let hand = (2.0 * 0.5 + 1.0 * -0.4) / (2.0 + 1.0);
    if s != hand || (s - 0.2).abs() > f64::EPSILON * 0.2 {
        problems.push(format!("satisfaction {s:?} vs hand {hand:?}"));
    }
    let d = dissonance_of(&[1.0, 1.0], &[vec![3.0 / 3.0], vec![-1.0 / 3.0]], 0);
    let d_scaled = dissonance_of(&[3.0, 1.0], &[vec![1.0], vec![-1.0]], 0);
    if d != 0.5 || d_scaled != 0.5 {
        problems.push(format!("dissonance {d} / {d_scaled}, expected 0.5"));
    }

    let params = HumatParams { dissonance_threshold: 0.3, learning_rate: 0.5, aspiration: 0.1, ..HumatParams::default() };

    // Exhaustive: every graph on 3 agents times every combination of four
    // evaluation archetypes, two persuasion levels and two current choices.
    let archetypes: [Vec<Vec<f64>>; 4] = [
        vec![vec![1.0, -0.5], vec![-0.8, 0.5]],
        vec![vec![0.5, 0.5], vec![0.5, 0.25]],
        vec![vec![-1.0, 1.0], vec![0.75, -0.25]],
        vec![vec![0.0, 0.0], vec![0.0, 0.0]],
    ];
    let all_pairs = [(0, 1), (0, 2), (1, 2)];
    let mut instances = 0;
    let mut mismatches = 0;
    for mask in 0..8u32 {
        let edges: Vec<(usize, usize)> = all_pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect();
        let mut adj = vec![Vec::new(); 3];
        for &(i, j) in &edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let network = net_of(3, &edges);
        for state in 0..16u32.pow(3) {
            let agents: Vec<OracleAgent> = (0..3)
                .map(|a| {
                    let code = state / 16u32.pow(a) % 16;
                    OracleAgent {
                        w: vec![0.6, 0.4],
                        e: archetypes[(code % 4) as usize].clone(),
                        persuasion: if code / 4 % 2 == 0 { 0.5 } else { 1.0 },
                        choice: (code / 8) as usize,
                    }
                })
                .collect();
            let (expected, changed) = oracle_round(&agents, &adj, &params);
            let mut lib = to_lib(&agents);
            let lib_changed = diffusion_round(&mut lib, &network, &params);
            instances += 1;
            if lib_changed != changed || !same_state(&lib, &expected) {
                mismatches += 1;
            }
        }
    }
    if mismatches > 0 {
        problems.push(format!("{mismatches}/{instances} exhaustive 3-agent rounds differ from the oracle"));
    }

    // Two-agent dumbbell, opposing strong views, full trust.
    let trust = HumatParams { dissonance_threshold: 0.3, learning_rate: 1.0, aspiration: 0.0, ..HumatParams::default() };
    let dumbbell = vec![
        OracleAgent { w: vec![1.0, 1.0], e: vec![vec![1.0, -1.0], vec![-0.6, 0.2]], persuasion: 1.0, choice: 1 },
        OracleAgent { w: vec![1.0, 1.0], e: vec![vec![-1.0, 1.0], vec![0.2, -0.6]], persuasion: 1.0, choice: 0 },
    ];
    let (expected, changed) = oracle_round(&dumbbell, &[vec![1], vec![0]], &trust);
    let mut lib = to_lib(&dumbbell);
    if diffusion_round(&mut lib, &net_of(2, &[(0, 1)]), &trust) != changed || !same_state(&lib, &expected) {
        problems.push("dumbbell round differs from the oracle".into());
    }

    // Adoption limit on every connected 5-agent graph: one content agent
    // sure of alternative 0, the rest dissonant and dissatisfied.
    let five: Vec<(usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
    let mut graphs = 0;
    let mut not_adopted = 0;
    let adoption = HumatParams { dissonance_threshold: 0.3, learning_rate: 1.0, aspiration: 0.5, ..HumatParams::default() };
    for mask in 0..1u32 << five.len() {
        let edges: Vec<(usize, usize)> = five.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect();
        let mut reach = vec![false; 5];
        reach[0] = true;
        for _ in 0..5 {
            for &(i, j) in &edges {
                if reach[i] || reach[j] {
                    reach[i] = true;
                    reach[j] = true;
                }
            }
        }
        if !reach.iter().all(|&r| r) {
            continue;
        }
        graphs += 1;
        for leader in 0..5 {
            let agents: Vec<OracleAgent> = (0..5)
                .map(|i| OracleAgent {
                    w: vec![1.0, 1.0],
                    e: if i == leader { vec![vec![1.0, 0.0], vec![1.0, 0.0]] } else { vec![vec![-0.5, 1.0], vec![0.4, -0.8]] },
                    persuasion: 1.0,
                    choice: usize::from(i != leader),
                })
                .collect();
            let mut lib = to_lib(&agents);
            let network = net_of(5, &edges);
            for _ in 0..5 {
                diffusion_round(&mut lib, &network, &adoption);
            }
            if lib.iter().any(|a| a.choice() != 0) {
                not_adopted += 1;
            }
        }
    }
    if not_adopted > 0 {
        problems.push(format!("{not_adopted} connected 5-agent instances did not converge to the dominant alternative"));
    }

    // Visiting order: 100 random permutations on a calibrated fixture.
    let config = bundled("crowdshipping_small");
    let setup = setup_phase(&config, config.seed, &RunOptions::default()).unwrap();
    let network = setup.network.as_ref().unwrap();
    let mut reference = setup.agents.clone();
    let ref_changed = diffusion_round(&mut reference, network, &config.humat);
    let mut rng = RandomStream::new(6, "permutations");
    let mut order_mismatch = 0;
    for _ in 0..100 {
        let mut order: Vec<usize> = (0..setup.agents.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.index(i + 1));
        }
        let mut agents = setup.agents.clone();
        if diffusion_round_in_order(&mut agents, network, &config.humat, &order) != ref_changed || agents != reference {
            order_mismatch += 1;
        }
    }
    if order_mismatch > 0 {
        problems.push(format!("{order_mismatch}/100 permutations changed the round"));
    }

    verdict(
        6,
        "humat algebra",
        problems.is_empty(),
        &format!(
            "S={s:?} D=0.5; {instances} exhaustive 3-agent rounds, {graphs} connected 5-agent graphs x5 leaders, 100 orders {problems:?}"
        ),
    );
}

// 7 ----------------------------------------------------------------------------

fn tour_len(order: &[usize], depot: usize, d: &[Vec<f64>]) -> f64 {
    let mut at = depot;
    let mut total = 0.0;
    for &z in order.iter().chain(std::iter::once(&depot)) {
        total += d[at][z];
        at = z;
    }
    total
}

/// Shortest closed tour over all orders (Heap's algorithm).
fn brute_force(stops: &[usize], depot: usize, d: &[Vec<f64>]) -> f64 {
    let mut a = stops.to_vec();
    let mut c = vec![0usize; a.len()];
    let mut best = tour_len(&a, depot, d);
    let mut i = 0;
    while i < a.len() {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            best = best.min(tour_len(&a, depot, d));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn c7_tour_quality() {
    let mut rng = RandomStream::new(7, "tours");
    let mut not_worse = 0;
    let mut within = 0;
    let mut worst_ratio = 0.0f64;
    for _ in 0..100 {
        let points: Vec<LatLon> =
            (0..9).map(|_| LatLon::new(52.0 + 0.05 * rng.next_f64(), 4.3 + 0.08 * rng.next_f64())).collect();
        let d = distance_matrix(&points);
        let stops: Vec<usize> = (1..9).collect();
        let nn = nearest_neighbor_order(&stops, 0, &d, |z| z);
        let improved = two_opt_order(&nn, 0, &d);
        let (l_nn, l_2opt) = (tour_len(&nn, 0, &d), tour_len(&improved, 0, &d));
        let mut sorted = improved.clone();
        sorted.sort_unstable();
        if l_2opt <= l_nn && sorted == stops {
            not_worse += 1;
        }
        let ratio = l_2opt / brute_force(&stops, 0, &d);
        worst_ratio = worst_ratio.max(ratio);
        if ratio <= 1.2 {
            within += 1;
        }
    }
    verdict(
        7,
        "tour quality",
        not_worse == 100 && within >= 90,
        &format!("2-opt <= nearest neighbour on {not_worse}/100, within 1.2x optimum on {within}/100 (worst {worst_ratio:.3})"),
    );
}

// 8 ----------------------------------------------------------------------------

#[test]
fn c8_locker_constraints() {
    let tmp = tempfile::tempdir().unwrap();
    let mut violations = Vec::new();
    let mut kpi_mismatch = Vec::new();
    let mut assigned_total = 0;
    let mut full_days = 0;
    for k in 0..50 {
        let (config, freight_only) = fuzz_scenario(k, true, &tmp.path().join(format!("s{k}")));
        let out = tmp.path().join(format!("run{k}"));
        orchestrator::run(&config, &RunOptions { freight_only, ..Default::default() }, &out).unwrap();

        let parcels = read_csv(&out.join("parcels.csv"));
        let day_of: HashMap<&str, u32> = parcels.iter().map(|r| (r["parcel_id"].as_str(), r["day"].parse().unwrap())).collect();
        let zone_of: HashMap<&str, &str> = parcels.iter().map(|r| (r["parcel_id"].as_str(), r["zone"].as_str())).collect();
        let centroid: HashMap<&str, LatLon> = config.zones.iter().map(|z| (z.zone_id.as_str(), z.centroid())).collect();
        let open = |l: &LockerSpec, day: u32| l.availability.is_empty() || l.availability[(day as usize - 1) % l.availability.len()];

        let mut used: BTreeMap<(u32, &str), u32> = BTreeMap::new();
        let assignments = read_csv(&out.join("assignments.csv"));
        for a in &assignments {
            let Some(locker_id) = a["detail"].strip_prefix("locker:") else { continue };
            let pid = a["parcel_id"].as_str();
            let day = day_of[pid];
            let locker = config.lockers.iter().find(|l| l.locker_id == locker_id).unwrap();
            *used.entry((day, locker_id)).or_default() += 1;
            if !open(locker, day) {
                violations.push(format!("{}: {locker_id} used while closed on day {day}", config.name));
            }
            let walk = great_circle_km(centroid[zone_of[pid]], locker.position());
            if walk > config.market.walk_max_km {
                violations.push(format!("{}: parcel {pid} walks {walk:.3} km", config.name));
            }
            if a["channel"] != "parcel_locker" {
                violations.push(format!("{}: parcel {pid} has locker detail on {}", config.name, a["channel"]));
            }
        }
        for (&(day, id), &n) in &used {
            let cap = config.lockers.iter().find(|l| l.locker_id == id).unwrap().capacity;
            if n > cap {
                violations.push(format!("{}: {id} holds {n} > {cap} on day {day}", config.name));
            }
            full_days += usize::from(n == cap);
        }

        for row in read_csv(&out.join("market_kpis.csv")).iter().filter(|r| r["channel"] == "parcel_locker") {
            let day: u32 = row["day"].parse().unwrap();
            let assigned: u32 = used.iter().filter(|((d, _), _)| *d == day).map(|(_, n)| n).sum();
            let capacity: u32 = config.lockers.iter().filter(|l| open(l, day)).map(|l| l.capacity).sum();
            let expected = if capacity == 0 { 0.0 } else { assigned as f64 / capacity as f64 };
            let reported: f64 = row["utilization"].parse().unwrap();
            let reported_cap: u32 = row["locker_capacity"].parse().unwrap();
            if reported != expected || reported_cap != capacity {
                kpi_mismatch.push(format!("{} day {day}: reported {reported} of {reported_cap}, recomputed {expected} of {capacity}", config.name));
            }
            assigned_total += assigned as usize;
        }
    }
    verdict(
        8,
        "locker constraints",
        violations.is_empty() && kpi_mismatch.is_empty(),
        &format!(
            "50 fuzzed locker scenarios, {assigned_total} locker parcels, {full_days} locker-days at capacity, {} violations, {} KPI mismatches {:?}{:?}",
            violations.len(),
            kpi_mismatch.len(),
            violations.iter().take(3).collect::<Vec<_>>(),
            kpi_mismatch.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

// 9 ----------------------------------------------------------------------------

#[test]
fn c9_closed_loop_direction() {
    let config = bundled("feedback_sanity");
    let locker = config.channel_index(Channel::ParcelLocker).unwrap();
    let courier = &config.carriers[0];
    assert!(!config.demand.success_in_allocation && courier.success_rate == 0.5);

    let days = 5;
    let mut ups = 0;
    let mut downs = 0;
    let mut mean_by_day = vec![0.0; days + 1];
    for seed in 1..=20u64 {
        let mut setup = setup_phase(&config, seed, &RunOptions::default()).unwrap();
        let share = |agents: &[HumatAgent]| agents.iter().filter(|a| a.choice() == locker).count() as f64 / agents.len() as f64;
        let start = share(&setup.agents);
        let records = execute_phase(&mut setup, days as u32).unwrap();
        let failures = records.iter().flat_map(|r| &r.outcomes).filter(|o| !o.success).count();
        let locker_failures = records.iter().flat_map(|r| &r.outcomes).filter(|o| o.channel == Channel::ParcelLocker && !o.success).count();
        assert!(failures > 0 && locker_failures == 0);
        // Per-day shares from the recorded snapshots, after calibration.
        let series: Vec<f64> = setup
            .humat_kpis
            .iter()
            .skip_while(|(label, _)| label != "calibrated")
            .map(|(_, kpis)| kpis.iter().find(|k| k.grouping == "all").unwrap().groups[0].share[locker])
            .collect();
        assert_eq!(series.len(), days + 1);
        assert_eq!(series[0], start);
        for (m, s) in mean_by_day.iter_mut().zip(&series) {
            *m += s / 20.0;
        }
        let end = share(&setup.agents);
        if end > start {
            ups += 1;
        } else if end < start {
            downs += 1;
        }
    }
    let n = ups + downs;
    // One-sided sign test: P(X >= ups) for X ~ Binomial(n, 1/2).
    let p = if ups == 0 { 1.0 } else { 1.0 - Binomial::new(0.5, n).unwrap().cdf(ups - 1) };
    let series: Vec<String> = mean_by_day.iter().map(|m| format!("{m:.3}")).collect();
    verdict(
        9,
        "closed-loop direction",
        p < 0.05,
        &format!("locker share rose on {ups} and fell on {downs} of 20 seeds, sign test p {p:.2e}; mean share by day [{}]", series.join(", ")),
    );
}
