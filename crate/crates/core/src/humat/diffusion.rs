//! Inquiring and signalling over the social network.
//!
//! A round classifies every agent against a frozen snapshot, collects the
//! resulting belief updates, and applies them per target in a canonical
//! order. The outcome therefore does not depend on the order in which
//! agents are visited.

use super::{HumatAgent, HumatError, HumatParams};
use crate::socnet::SocialNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Not dissonant about the chosen alternative.
    Content,
    /// Dissonant and dissatisfied: asks the most persuasive alter.
    Inquire,
    /// Dissonant but satisfied: pushes its view to every alter.
    Signal,
}

/// An agent is dissatisfied when another alternative scores higher or the
/// chosen one falls short of the aspiration level.
pub fn is_dissatisfied(agent: &HumatAgent, params: &HumatParams) -> bool {
    let s = agent.satisfactions();
    let own = s[agent.choice()];
    own < params.aspiration || s.iter().enumerate().any(|(a, &x)| a != agent.choice() && x > own)
}

pub fn classify(agent: &HumatAgent, params: &HumatParams) -> Strategy {
    if agent.dissonances()[agent.choice()] < params.dissonance_threshold {
        Strategy::Content
    } else if is_dissatisfied(agent, params) {
        Strategy::Inquire
    } else {
        Strategy::Signal
    }
}

/// Alter with the highest persuasion times layer influence. Ties go to the
/// alter more satisfied with its own choice, then to the lower index.
fn most_persuasive(agent: usize, network: &SocialNetwork, agents: &[HumatAgent]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &(j, influence) in network.neighbors(agent) {
        let eff = agents[j].persuasion * influence;
        let sat = agents[j].satisfactions()[agents[j].choice()];
        let better = match best {
            None => true,
            Some((bj, be, bs)) => eff > be || (eff == be && (sat > bs || (sat == bs && j < bj))),
        };
        if better {
            best = Some((j, eff, sat));
        }
    }
    best.map(|(j, e, _)| (j, e))
}

fn blend(target: &mut HumatAgent, alternative: usize, source: &[f64], learning_rate: f64, persuasion: f64) {
    for (row, &v) in target.evaluations_mut().iter_mut().zip(source) {
        let e = &mut row[alternative];
        *e = ((1.0 - learning_rate) * *e + learning_rate * persuasion * v).clamp(-1.0, 1.0);
    }
}

/// Moves the agent's evaluations of `alternative` toward those of its most
/// persuasive alter. Caches are refreshed; the choice is left alone.
pub fn inquire(
    agent: usize,
    network: &SocialNetwork,
    agents: &mut [HumatAgent],
    alternative: usize,
    params: &HumatParams,
) -> Result<(), HumatError> {
    if alternative >= agents[agent].alternatives() {
        return Err(HumatError::UnknownAlternative(alternative));
    }
    let (alter, persuasion) =
        most_persuasive(agent, network, agents).ok_or(HumatError::NoAlters(agents[agent].person_id))?;
    let source = agents[alter].evaluation_column(alternative);
    blend(&mut agents[agent], alternative, &source, params.learning_rate, persuasion);
    agents[agent].refresh();
    Ok(())
}

/// Pushes the agent's evaluations of its chosen alternative to every alter,
/// weighted by the agent's persuasion. Returns the number of alters reached.
pub fn signal(agent: usize, network: &SocialNetwork, agents: &mut [HumatAgent], params: &HumatParams) -> usize {
    let alternative = agents[agent].choice();
    let source = agents[agent].evaluation_column(alternative);
    let persuasion = agents[agent].persuasion;
    let alters = network.neighbors(agent);
    for &(j, influence) in alters {
        blend(&mut agents[j], alternative, &source, params.learning_rate, persuasion * influence);
        agents[j].refresh();
    }
    alters.len()
}

struct Update {
    target: usize,
    /// 0 for inquiries, 1 for signals; inquiries apply first.
    kind: u8,
    source: usize,
    alternative: usize,
    persuasion: f64,
    values: Vec<f64>,
}

/// One synchronous round visiting agents in index order. Returns how many
/// agents changed their choice.
pub fn diffusion_round(agents: &mut [HumatAgent], network: &SocialNetwork, params: &HumatParams) -> usize {
    let order: Vec<usize> = (0..agents.len()).collect();
    diffusion_round_in_order(agents, network, params, &order)
}

/// Same as [`diffusion_round`] with an explicit visiting order. The result is
/// identical for every permutation.
pub fn diffusion_round_in_order(
    agents: &mut [HumatAgent],
    network: &SocialNetwork,
    params: &HumatParams,
    order: &[usize],
) -> usize {
    let snapshot: &[HumatAgent] = agents;
    let mut updates = Vec::new();
    for &i in order {
        let agent = &snapshot[i];
        match classify(agent, params) {
            Strategy::Content => {}
            Strategy::Inquire => {
                let Some((alter, persuasion)) = most_persuasive(i, network, snapshot) else { continue };
                for alternative in 0..agent.alternatives() {
                    updates.push(Update {
                        target: i,
                        kind: 0,
                        source: alter,
                        alternative,
                        persuasion,
                        values: snapshot[alter].evaluation_column(alternative),
                    });
                }
            }
            Strategy::Signal => {
                let alternative = agent.choice();
                let values = agent.evaluation_column(alternative);
                for &(j, influence) in network.neighbors(i) {
                    updates.push(Update {
                        target: j,
                        kind: 1,
                        source: i,
                        alternative,
                        persuasion: agent.persuasion * influence,
                        values: values.clone(),
                    });
                }
            }
        }
    }
    updates.sort_by_key(|u| (u.target, u.kind, u.source, u.alternative));

    let before: Vec<usize> = agents.iter().map(HumatAgent::choice).collect();
    for u in &updates {
        blend(&mut agents[u.target], u.alternative, &u.values, params.learning_rate, u.persuasion);
    }
    let mut touched: Vec<usize> = updates.iter().map(|u| u.target).collect();
    touched.dedup();
    for t in touched {
        agents[t].refresh();
    }
    agents
        .iter_mut()
        .zip(before)
        .map(|(a, b)| a.choose() != b)
        .filter(|&changed| changed)
        .count()
}

/// Runs rounds until no choice changes or `max_rounds` is reached. Returns
/// the number of rounds run and whether the last one was quiet.
pub fn run_diffusion(
    agents: &mut [HumatAgent],
    network: &SocialNetwork,
    params: &HumatParams,
    max_rounds: usize,
) -> (usize, bool) {
    for round in 1..=max_rounds {
        if diffusion_round(agents, network, params) == 0 {
            return (round, true);
        }
    }
    (max_rounds, false)
}
