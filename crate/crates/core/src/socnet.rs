//! Homophily networks over persons: friendship, job and neighborhood layers.
//!
//! Each layer draws candidate pairs, scores them with [`similarity`], and
//! admits each pair independently with probability `min(1, c · similarity)`,
//! where the scale `c` is solved by bisection so that the expected mean degree
//! over the layer's members equals the configured `k_mean`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::great_circle_km;
use crate::popsynth::{AttributeSchema, Population};
use crate::rng::RandomStream;
use crate::scenario::{ScenarioError, Zone};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SocnetError {
    #[error("schema mismatch: person has {found} attributes, weights cover {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("unknown person {0}")]
    UnknownPerson(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Friendship,
    Job,
    Neighborhood,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::Friendship, LayerKind::Job, LayerKind::Neighborhood];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Friendship => "friendship",
            LayerKind::Job => "job",
            LayerKind::Neighborhood => "neighborhood",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Key used for the spatial term in per-layer weight tables.
pub const SPATIAL_KEY: &str = "spatial";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub k_mean: f64,
    /// Multiplier on persuasion for communication along this layer.
    #[serde(default = "one")]
    pub influence: f64,
    /// Raw weights by attribute name, plus `spatial`; normalized on use.
    pub weights: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// Distance at which the spatial kernel halves.
    #[serde(default = "default_d_half")]
    pub d_half_km: f64,
    /// Zones whose centroids are at most this far apart are adjacent.
    #[serde(default = "default_adjacency")]
    pub adjacency_km: f64,
    /// Sampled partners per person when the full pair set is too large.
    #[serde(default = "default_candidates")]
    pub candidates_per_person: usize,
    pub friendship: LayerParams,
    pub job: LayerParams,
    pub neighborhood: LayerParams,
}

fn default_d_half() -> f64 {
    2.0
}
fn default_adjacency() -> f64 {
    2.5
}
fn default_candidates() -> usize {
    50
}

impl NetworkParams {
    pub fn layer(&self, kind: LayerKind) -> &LayerParams {
        match kind {
            LayerKind::Friendship => &self.friendship,
            LayerKind::Job => &self.job,
            LayerKind::Neighborhood => &self.neighborhood,
        }
    }

    pub(crate) fn validate(&self, schema: &AttributeSchema) -> Result<(), ScenarioError> {
        let bad = |field: String, msg: String| Err(ScenarioError::validation(field, msg));
        if !(self.d_half_km > 0.0) {
            return bad("network.d_half_km".into(), "must be positive".into());
        }
        if !(self.adjacency_km >= 0.0) {
            return bad("network.adjacency_km".into(), "must be nonnegative".into());
        }
        if self.candidates_per_person == 0 {
            return bad("network.candidates_per_person".into(), "must be positive".into());
        }
        for kind in LayerKind::ALL {
            let layer = self.layer(kind);
            let field = |f: &str| format!("network.{}.{f}", kind.as_str());
            if !(layer.k_mean >= 0.0 && layer.k_mean.is_finite()) {
                return bad(field("k_mean"), format!("{} is not a nonnegative number", layer.k_mean));
            }
            if !(0.0..=1.0).contains(&layer.influence) {
                return bad(field("influence"), format!("{} outside [0,1]", layer.influence));
            }
            if let Err(e) = SimilarityWeights::from_named(schema, &layer.weights) {
                return bad(field("weights"), e);
            }
        }
        Ok(())
    }
}

/// Normalized weights: one per schema attribute plus the spatial term.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityWeights {
    pub attributes: Vec<f64>,
    pub spatial: f64,
}

impl SimilarityWeights {
    /// Normalizes raw weights so that they sum to 1.
    pub fn new(attributes: Vec<f64>, spatial: f64) -> Result<Self, String> {
        if attributes.iter().chain(std::iter::once(&spatial)).any(|w| !w.is_finite() || *w < 0.0) {
            return Err("weights must be nonnegative".into());
        }
        let total: f64 = attributes.iter().sum::<f64>() + spatial;
        if total <= 0.0 {
            return Err("at least one weight must be positive".into());
        }
        Ok(Self { attributes: attributes.iter().map(|w| w / total).collect(), spatial: spatial / total })
    }

    pub fn from_named(schema: &AttributeSchema, named: &BTreeMap<String, f64>) -> Result<Self, String> {
        let mut attributes = vec![0.0; schema.len()];
        let mut spatial = 0.0;
        for (name, &w) in named {
            if name == SPATIAL_KEY {
                spatial = w;
            } else {
                let a = schema.index_of(name).ok_or_else(|| format!("unknown attribute `{name}`"))?;
                attributes[a] = w;
            }
        }
        Self::new(attributes, spatial)
    }
}

/// Weighted share of matching attributes plus an exponentially decaying
/// spatial term; in `[0, 1]`.
pub fn similarity(
    a: &[usize],
    b: &[usize],
    w: &SimilarityWeights,
    zone_distance_km: f64,
    d_half: f64,
) -> Result<f64, SocnetError> {
    if a.len() != w.attributes.len() || b.len() != w.attributes.len() {
        return Err(SocnetError::SchemaMismatch { expected: w.attributes.len(), found: a.len().max(b.len()) });
    }
    debug_assert!(d_half > 0.0);
    let matches: f64 = a
        .iter()
        .zip(b)
        .zip(&w.attributes)
        .filter(|((x, y), _)| x == y)
        .map(|(_, w)| w)
        .sum();
    let kernel = (-std::f64::consts::LN_2 * zone_distance_km / d_half).exp();
    Ok((matches + w.spatial * kernel).clamp(0.0, 1.0))
}

/// Inputs shared by all layers of one network build.
#[derive(Debug, Clone)]
pub struct LayerContext {
    /// Pairwise zone centroid distances.
    pub zone_distance: Vec<Vec<f64>>,
    pub d_half_km: f64,
    pub adjacency_km: f64,
    pub candidates_per_person: usize,
    /// Person indices eligible for the job layer.
    pub employed: Vec<bool>,
}

impl LayerContext {
    pub fn new(population: &Population, zones: &[Zone], params: &NetworkParams, employed: Vec<bool>) -> Self {
        debug_assert_eq!(employed.len(), population.persons.len());
        let zone_distance = zones
            .iter()
            .map(|a| zones.iter().map(|b| great_circle_km(a.centroid(), b.centroid())).collect())
            .collect();
        Self {
            zone_distance,
            d_half_km: params.d_half_km,
            adjacency_km: params.adjacency_km,
            candidates_per_person: params.candidates_per_person,
            employed,
        }
    }
}

/// Undirected simple graph over person indices; adjacency lists ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeLayer {
    adjacency: Vec<Vec<(usize, f64)>>,
    edge_count: usize,
}

impl EdgeLayer {
    pub fn empty(n: usize) -> Self {
        Self { adjacency: vec![Vec::new(); n], edge_count: 0 }
    }

    /// Builds from `(i, j, weight)` triples with `i != j`; duplicates keep the
    /// first weight.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut layer = Self::empty(n);
        let mut seen = std::collections::BTreeSet::new();
        for (i, j, w) in edges {
            assert!(i != j && i < n && j < n, "invalid edge ({i}, {j})");
            if seen.insert((i.min(j), i.max(j))) {
                layer.adjacency[i].push((j, w));
                layer.adjacency[j].push((i, w));
                layer.edge_count += 1;
            }
        }
        for list in &mut layer.adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        layer
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search_by_key(&j, |&(k, _)| k).is_ok()
    }

    /// Edges as `(i, j, weight)` with `i < j`, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |(j, _)| *j > i).map(move |&(j, w)| (i, j, w)))
    }
}

fn candidate_pairs(
    population: &Population,
    kind: LayerKind,
    ctx: &LayerContext,
    rng: &mut RandomStream,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let n = population.persons.len();
    let members: Vec<usize> = match kind {
        LayerKind::Job => (0..n).filter(|&i| ctx.employed[i]).collect(),
        _ => (0..n).collect(),
    };
    let m = members.len();
    let mut pairs = Vec::new();
    match kind {
        LayerKind::Neighborhood => {
            for (x, &i) in members.iter().enumerate() {
                let zi = population.persons[i].zone;
                for &j in &members[x + 1..] {
                    if ctx.zone_distance[zi][population.persons[j].zone] <= ctx.adjacency_km {
                        pairs.push((i, j));
                    }
                }
            }
        }
        LayerKind::Friendship | LayerKind::Job => {
            let full = m.saturating_sub(1) * m / 2;
            if full <= ctx.candidates_per_person * m {
                for (x, &i) in members.iter().enumerate() {
                    pairs.extend(members[x + 1..].iter().map(|&j| (i, j)));
                }
            } else {
                // Every member proposes the same number of partners.
                for (x, &i) in members.iter().enumerate() {
                    for _ in 0..ctx.candidates_per_person {
                        let mut y = rng.index(m - 1);
                        if y >= x {
                            y += 1;
                        }
                        let j = members[y];
                        pairs.push((i.min(j), i.max(j)));
                    }
                }
                pairs.sort_unstable();
                pairs.dedup();
            }
        }
    }
    (members, pairs)
}

/// Scale `c` with `Σ min(1, c·s) = target`, or the saturating scale when the
/// target is out of reach.
fn solve_scale(scores: &[f64], target: f64) -> f64 {
    let min_pos = scores.iter().copied().filter(|&s| s > 0.0).fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() || target <= 0.0 {
        return 0.0;
    }
    let hi_scale = 1.0 / min_pos;
    let expected = |c: f64| scores.iter().map(|&s| (c * s).min(1.0)).sum::<f64>();
    if expected(hi_scale) <= target {
        return hi_scale;
    }
    let (mut lo, mut hi) = (0.0, hi_scale);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// Builds one homophily layer.
pub fn build_layer(
    population: &Population,
    kind: LayerKind,
    weights: &SimilarityWeights,
    k_mean: f64,
    ctx: &LayerContext,
    rng: &mut RandomStream,
) -> Result<EdgeLayer, SocnetError> {
    let n = population.persons.len();
    if k_mean <= 0.0 || n < 2 {
        return Ok(EdgeLayer::empty(n));
    }
    let (members, pairs) = candidate_pairs(population, kind, ctx, rng);
    if members.len() < 2 {
        return Ok(EdgeLayer::empty(n));
    }
    if k_mean >= members.len() as f64 {
        log::warn!(
            "{} layer: k_mean {k_mean} is not below the member count {}; saturating",
            kind.as_str(),
            members.len()
        );
    }
    let persons = &population.persons;
    let scores = pairs
        .iter()
        .map(|&(i, j)| {
            let d = ctx.zone_distance[persons[i].zone][persons[j].zone];
            similarity(&persons[i].attributes, &persons[j].attributes, weights, d, ctx.d_half_km)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let target = k_mean * members.len() as f64 / 2.0;
    let scale = solve_scale(&scores, target);
    let mut edges = Vec::new();
    for (&(i, j), &s) in pairs.iter().zip(&scores) {
        let p = (scale * s).min(1.0);
        if s > 0.0 && rng.next_f64() < p {
            edges.push((i, j, s));
        }
    }
    Ok(EdgeLayer::from_edges(n, edges))
}

/// Neighbors of one person, per layer, as person ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alters {
    pub friendship: Vec<u32>,
    pub job: Vec<u32>,
    pub neighborhood: Vec<u32>,
}

impl Alters {
    pub fn layer(&self, kind: LayerKind) -> &[u32] {
        match kind {
            LayerKind::Friendship => &self.friendship,
            LayerKind::Job => &self.job,
            LayerKind::Neighborhood => &self.neighborhood,
        }
    }
}

/// Three layers over the persons of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialNetwork {
    person_ids: Vec<u32>,
    layers: [EdgeLayer; 3],
    influence: [f64; 3],
    /// Union of all layers: neighbor index and the strongest layer influence.
    union: Vec<Vec<(usize, f64)>>,
}

impl SocialNetwork {
    pub fn new(person_ids: Vec<u32>, layers: [EdgeLayer; 3], influence: [f64; 3]) -> Self {
        let n = person_ids.len();
        let mut merged: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (layer, &inf) in layers.iter().zip(&influence) {
            assert_eq!(layer.adjacency.len(), n, "layer size must match person count");
            for (i, list) in layer.adjacency.iter().enumerate() {
                for &(j, _) in list {
                    let e = merged[i].entry(j).or_insert(inf);
                    *e = e.max(inf);
                }
            }
        }
        let union = merged.into_iter().map(|m| m.into_iter().collect()).collect();
        Self { person_ids, layers, influence, union }
    }

    /// A network with no edges.
    pub fn edgeless(person_ids: Vec<u32>) -> Self {
        let n = person_ids.len();
        Self::new(person_ids, [EdgeLayer::empty(n), EdgeLayer::empty(n), EdgeLayer::empty(n)], [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.person_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.person_ids.is_empty()
    }

    pub fn layer(&self, kind: LayerKind) -> &EdgeLayer {
        &self.layers[kind.slot()]
    }

    pub fn influence(&self, kind: LayerKind) -> f64 {
        self.influence[kind.slot()]
    }

    /// Distinct neighbors across layers with their influence multiplier.
    pub fn neighbors(&self, index: usize) -> &[(usize, f64)] {
        &self.union[index]
    }

    pub fn alters(&self, person_id: u32) -> Result<Alters, SocnetError> {
        let i = self
            .person_ids
            .binary_search(&person_id)
            .map_err(|_| SocnetError::UnknownPerson(person_id))?;
        let ids = |kind: LayerKind| -> Vec<u32> {
            self.layer(kind).neighbors(i).iter().map(|&(j, _)| self.person_ids[j]).collect()
        };
        Ok(Alters {
            friendship: ids(LayerKind::Friendship),
            job: ids(LayerKind::Job),
            neighborhood: ids(LayerKind::Neighborhood),
        })
    }

    /// `layer,person_a,person_b,weight`, one row per undirected edge.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "person_a", "person_b", "weight"])?;
        for kind in LayerKind::ALL {
            for (i, j, weight) in self.layer(kind).edges() {
                w.write_record([
                    kind.as_str().to_string(),
                    self.person_ids[i].to_string(),
                    self.person_ids[j].to_string(),
                    weight.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds all three layers, each from its own child stream.
pub fn build_network(
    population: &Population,
    zones: &[Zone],
    schema: &AttributeSchema,
    params: &NetworkParams,
    employed: Vec<bool>,
    rng: &RandomStream,
) -> Result<SocialNetwork, SocnetError> {
    let ctx = LayerContext::new(population, zones, params, employed);
    let mut layers = Vec::with_capacity(3);
    for kind in LayerKind::ALL {
        let lp = params.layer(kind);
        let weights = SimilarityWeights::from_named(schema, &lp.weights)
            .map_err(|_| SocnetError::SchemaMismatch { expected: schema.len(), found: lp.weights.len() })?;
        let mut stream = rng.derive(kind.as_str());
        layers.push(build_layer(population, kind, &weights, lp.k_mean, &ctx, &mut stream)?);
    }
    let layers: [EdgeLayer; 3] = layers.try_into().expect("three layers");
    let ids = population.persons.iter().map(|p| p.person_id).collect();
    Ok(SocialNetwork::new(
        ids,
        layers,
        [params.friendship.influence, params.job.influence, params.neighborhood.influence],
    ))
}
