//! Synthetic population: schema, marginal tables, IPF fitting and sampling of
//! persons grouped into households.

mod io;
mod ipf;

pub use io::{read_population_csv, write_households_csv, write_persons_csv, PopulationCsvError};
pub use ipf::{fit_ipf, IpfError, IpfFit, JointTable};

use serde::Serialize;

use crate::rng::{Categorical, RandomStream};
use crate::scenario::Zone;

/// One categorical attribute with ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attribute {
    pub name: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn category_index(&self, attribute: usize, label: &str) -> Option<usize> {
        self.attributes.get(attribute)?.categories.iter().position(|c| c == label)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.categories.len()).collect()
    }
}

/// Multiplicative prior on the joint table for one pair of categories.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSeed {
    pub attribute_a: usize,
    pub category_a: usize,
    pub attribute_b: usize,
    pub category_b: usize,
    pub weight: f64,
}

/// Per-attribute target counts aligned with an [`AttributeSchema`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarginalTable {
    pub counts: Vec<Vec<f64>>,
    pub pair_seeds: Vec<PairSeed>,
}

impl MarginalTable {
    pub fn total(&self) -> f64 {
        self.counts.first().map(|c| c.iter().sum()).unwrap_or(0.0)
    }

    /// Seed table: all ones, multiplied by every matching pair weight.
    pub fn seed_table(&self, schema: &AttributeSchema) -> JointTable {
        let mut table = JointTable::filled(schema.dims(), 1.0);
        if self.pair_seeds.is_empty() {
            return table;
        }
        for off in 0..table.cells().len() {
            let idx = table.unravel(off);
            let factor: f64 = self
                .pair_seeds
                .iter()
                .filter(|p| idx[p.attribute_a] == p.category_a && idx[p.attribute_b] == p.category_b)
                .map(|p| p.weight)
                .product();
            table.cells_mut()[off] *= factor;
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonRecord {
    pub person_id: u32,
    pub household_id: u32,
    /// Index into the scenario's zone list.
    pub zone: usize,
    /// One category index per schema attribute.
    pub attributes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseholdRecord {
    pub household_id: u32,
    pub zone: usize,
    /// Ascending person ids; never empty.
    pub members: Vec<u32>,
    pub income_band: Option<usize>,
}

impl HouseholdRecord {
    /// The member whose choices govern the household's parcels.
    pub fn decision_maker(&self) -> u32 {
        self.members[0]
    }
}

/// Persons sorted by id, households sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Population {
    pub persons: Vec<PersonRecord>,
    pub households: Vec<HouseholdRecord>,
}

impl Population {
    pub fn person_index(&self, person_id: u32) -> Option<usize> {
        self.persons.binary_search_by_key(&person_id, |p| p.person_id).ok()
    }

    pub fn household_index(&self, household_id: u32) -> Option<usize> {
        self.households.binary_search_by_key(&household_id, |h| h.household_id).ok()
    }

    /// Checks that persons and households form an exact partition with
    /// consistent zones. Returns a description of the first violation.
    pub fn check_partition(&self, zone_count: usize) -> Result<(), String> {
        let mut seen = vec![false; self.persons.len()];
        for h in &self.households {
            if h.members.is_empty() {
                return Err(format!("household {} has no members", h.household_id));
            }
            if h.zone >= zone_count {
                return Err(format!("household {} references unknown zone", h.household_id));
            }
            if !h.members.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("household {} members not ascending", h.household_id));
            }
            for &m in &h.members {
                let idx = self
                    .person_index(m)
                    .ok_or_else(|| format!("household {} lists unknown person {m}", h.household_id))?;
                if std::mem::replace(&mut seen[idx], true) {
                    return Err(format!("person {m} belongs to several households"));
                }
                let p = &self.persons[idx];
                if p.household_id != h.household_id || p.zone != h.zone {
                    return Err(format!("person {m} disagrees with household {}", h.household_id));
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(format!("person {} has no household", self.persons[i].person_id)),
            None => Ok(()),
        }
    }

    /// Whether the person holds `category` of `attribute`.
    pub fn has(&self, person: usize, attribute: usize, category: usize) -> bool {
        self.persons[person].attributes[attribute] == category
    }
}

/// Samples `n` persons from `joint` (cell weights, normalized internally) and
/// groups them into households.
///
/// Household sizes are drawn from `household_size_dist` (entry `k` is the
/// weight of size `k + 1`), members are taken from the shuffled person pool,
/// and each household's zone is drawn proportionally to `population_weight`.
/// `income_attribute` names the schema axis copied from the decision-maker
/// onto the household.
pub fn sample_population(
    joint: &JointTable,
    n: usize,
    zones: &[Zone],
    household_size_dist: &[f64],
    income_attribute: Option<usize>,
    rng: &mut RandomStream,
) -> Population {
    if n == 0 {
        return Population::default();
    }
    let cell_dist = Categorical::new(joint.cells()).expect("joint table must have positive mass");
    let zone_dist = Categorical::new(&zones.iter().map(|z| z.population_weight).collect::<Vec<_>>())
        .expect("zone weights must have positive mass");
    let size_dist = Categorical::new(household_size_dist).expect("household size distribution must have positive mass");

    let mut pool: Vec<Vec<usize>> = (0..n).map(|_| joint.unravel(cell_dist.sample(rng))).collect();
    for i in (1..pool.len()).rev() {
        let j = rng.index(i + 1);
        pool.swap(i, j);
    }

    let mut persons = Vec::with_capacity(n);
    let mut households = Vec::new();
    let mut next = 0usize;
    while next < n {
        let size = (size_dist.sample(rng) + 1).min(n - next);
        let zone = zone_dist.sample(rng);
        let household_id = households.len() as u32 + 1;
        let members: Vec<u32> = (next..next + size).map(|i| i as u32 + 1).collect();
        for i in next..next + size {
            persons.push(PersonRecord {
                person_id: i as u32 + 1,
                household_id,
                zone,
                attributes: std::mem::take(&mut pool[i]),
            });
        }
        let income_band = income_attribute.map(|a| persons[next].attributes[a]);
        households.push(HouseholdRecord { household_id, zone, members, income_band });
        next += size;
    }
    Population { persons, households }
}
