//! Channel shares and mean satisfaction per socio-demographic subgroup.

use std::io::Write;

use super::{HumatAgent, HumatError};
use crate::popsynth::{AttributeSchema, Population};
use crate::scenario::Channel;

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupKpi {
    pub category: String,
    pub agents: usize,
    /// Share of agents choosing each alternative, catalog order.
    pub share: Vec<f64>,
    /// Mean satisfaction with each alternative, catalog order.
    pub mean_satisfaction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionKpi {
    pub grouping: String,
    pub groups: Vec<SubgroupKpi>,
}

/// Aggregates agents by `label(agent index)`, an index into `categories`.
/// Empty categories are kept with zero agents and zero shares.
pub fn choice_shares_by(
    agents: &[HumatAgent],
    grouping: &str,
    categories: &[String],
    label: impl Fn(usize) -> usize,
) -> SatisfactionKpi {
    let n_alt = agents.first().map_or(0, HumatAgent::alternatives);
    let mut counts = vec![vec![0usize; n_alt]; categories.len()];
    let mut sat = vec![vec![0.0f64; n_alt]; categories.len()];
    let mut sizes = vec![0usize; categories.len()];
    for (i, a) in agents.iter().enumerate() {
        let g = label(i);
        sizes[g] += 1;
        counts[g][a.choice()] += 1;
        for (acc, s) in sat[g].iter_mut().zip(a.satisfactions()) {
            *acc += s;
        }
    }
    let groups = categories
        .iter()
        .enumerate()
        .map(|(g, name)| {
            let size = sizes[g];
            let div = |x: f64| if size == 0 { 0.0 } else { x / size as f64 };
            SubgroupKpi {
                category: name.clone(),
                agents: size,
                share: counts[g].iter().map(|&c| div(c as f64)).collect(),
                mean_satisfaction: sat[g].iter().map(|&s| div(s)).collect(),
            }
        })
        .collect();
    SatisfactionKpi { grouping: grouping.to_owned(), groups }
}

/// Groups by a schema attribute, or everyone when `grouping` is `all`.
/// Agents must be aligned with `population.persons`.
pub fn choice_shares(
    agents: &[HumatAgent],
    population: &Population,
    schema: &AttributeSchema,
    grouping: &str,
) -> Result<SatisfactionKpi, HumatError> {
    if grouping == "all" {
        return Ok(choice_shares_by(agents, grouping, &["all".to_owned()], |_| 0));
    }
    let attr = schema.index_of(grouping).ok_or_else(|| HumatError::UnknownAttribute(grouping.to_owned()))?;
    let categories = &schema.attributes[attr].categories;
    Ok(choice_shares_by(agents, grouping, categories, |i| population.persons[i].attributes[attr]))
}

/// Appends `snapshot,grouping,category,alternative,agents,share,mean_satisfaction` rows.
pub fn write_kpi_rows<W: Write>(
    out: &mut csv::Writer<W>,
    snapshot: &str,
    kpi: &SatisfactionKpi,
    channels: &[Channel],
) -> csv::Result<()> {
    for g in &kpi.groups {
        for (a, channel) in channels.iter().enumerate() {
            out.write_record([
                snapshot,
                &kpi.grouping,
                &g.category,
                channel.as_str(),
                &g.agents.to_string(),
                &g.share[a].to_string(),
                &g.mean_satisfaction[a].to_string(),
            ])?;
        }
    }
    Ok(())
}
