//! Socio-cognitive consumer agents.
//!
//! Each agent weighs a set of motives (experiential, social, values) and holds
//! an evaluation in `[-1, 1]` of every delivery alternative on every motive.
//! Satisfaction is the importance-weighted mean evaluation; dissonance
//! measures how evenly an alternative splits weight between motives it
//! serves and motives it frustrates. Dissonant agents communicate over the
//! social network (see [`diffusion`]).

pub mod diffusion;
pub mod kpi;

pub use diffusion::{diffusion_round, diffusion_round_in_order, inquire, run_diffusion, signal, Strategy};
pub use kpi::{choice_shares, choice_shares_by, write_kpi_rows, SatisfactionKpi, SubgroupKpi};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DeliveryOutcome;
use crate::popsynth::Population;
use crate::rng::RandomStream;
use crate::scenario::ScenarioError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumatError {
    #[error("no importance distribution for motive `{motive}` matches person {person_id}")]
    MissingStratum { person_id: u32, motive: String },
    #[error("alternative index {0} is not in the channel catalog")]
    UnknownAlternative(usize),
    #[error("agent {0} has no alters")]
    NoAlters(u32),
    #[error("unknown grouping attribute `{0}`")]
    UnknownAttribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotiveGroup {
    Experiential,
    Social,
    Values,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Motive {
    pub name: String,
    pub group: MotiveGroup,
}

/// How an importance is drawn from its `(mean, sd)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceShape {
    /// Gaussian, clamped to `[0, 1]`.
    #[default]
    Normal,
    /// Uniform with the given mean and standard deviation, i.e. on
    /// `mean ± √3·sd`, clamped to `[0, 1]`.
    Uniform,
}

/// Importance distribution of one motive, optionally restricted to persons
/// holding one category of one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRule {
    pub motive: usize,
    /// `(attribute, category)`; `None` applies to everyone.
    pub stratum: Option<(usize, usize)>,
    pub mean: f64,
    pub sd: f64,
    pub shape: ImportanceShape,
}

/// Survey prior for the evaluation of one alternative on one motive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationPrior {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotiveSpec {
    pub motives: Vec<Motive>,
    pub rules: Vec<ImportanceRule>,
    /// `priors[motive][alternative]`, alternatives in catalog order.
    pub priors: Vec<Vec<EvaluationPrior>>,
}

impl MotiveSpec {
    /// Stratum-specific rules win over the catch-all; among several matching
    /// specific rules the first listed wins.
    pub fn rule_for(&self, motive: usize, attributes: &[usize]) -> Option<&ImportanceRule> {
        let candidates = || self.rules.iter().filter(move |r| r.motive == motive);
        candidates()
            .find(|r| matches!(r.stratum, Some((a, c)) if attributes.get(a) == Some(&c)))
            .or_else(|| candidates().find(|r| r.stratum.is_none()))
    }

    pub(crate) fn validate(&self) -> Result<(), ScenarioError> {
        for group in [MotiveGroup::Experiential, MotiveGroup::Social, MotiveGroup::Values] {
            if !self.motives.iter().any(|m| m.group == group) {
                return Err(ScenarioError::validation("motives.group", format!("no motive in group {group:?}")));
            }
        }
        for r in &self.rules {
            if !(0.0..=1.0).contains(&r.mean) || !(r.sd >= 0.0 && r.sd.is_finite()) {
                return Err(ScenarioError::validation(
                    "motives.importance",
                    format!("motive `{}`: mean {} / sd {} out of range", self.motives[r.motive].name, r.mean, r.sd),
                ));
            }
        }
        for (m, row) in self.priors.iter().enumerate() {
            for p in row {
                if !(-1.0..=1.0).contains(&p.mean) || !(p.sd >= 0.0 && p.sd.is_finite()) {
                    return Err(ScenarioError::validation(
                        "priors",
                        format!("motive `{}`: eval mean {} / sd {} out of range", self.motives[m].name, p.mean, p.sd),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumatParams {
    /// Dissonance at or above which an agent acts on its chosen alternative.
    #[serde(default = "default_threshold")]
    pub dissonance_threshold: f64,
    /// Weight of incoming information in belief updates.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Nudge applied to experiential evaluations after a delivery.
    #[serde(default = "default_experience_step")]
    pub experience_step: f64,
    #[serde(default)]
    pub persuasion_min: f64,
    #[serde(default = "default_persuasion_max")]
    pub persuasion_max: f64,
    /// Satisfaction below which the chosen alternative counts as
    /// dissatisfying even when nothing better is known.
    #[serde(default)]
    pub aspiration: f64,
    /// Diffusion rounds run during setup.
    #[serde(default = "default_setup_rounds")]
    pub setup_rounds: usize,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_learning_rate() -> f64 {
    0.3
}
fn default_experience_step() -> f64 {
    0.1
}
fn default_persuasion_max() -> f64 {
    1.0
}
fn default_setup_rounds() -> usize {
    50
}

impl Default for HumatParams {
    fn default() -> Self {
        Self {
            dissonance_threshold: default_threshold(),
            learning_rate: default_learning_rate(),
            experience_step: default_experience_step(),
            persuasion_min: 0.0,
            persuasion_max: default_persuasion_max(),
            aspiration: 0.0,
            setup_rounds: default_setup_rounds(),
        }
    }
}

impl HumatParams {
    pub(crate) fn validate(&self) -> Result<(), ScenarioError> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ScenarioError::validation(format!("humat.{field}"), msg))
            }
        };
        check((0.0..=1.0).contains(&self.dissonance_threshold), "dissonance_threshold", "outside [0,1]")?;
        check(self.learning_rate > 0.0 && self.learning_rate <= 1.0, "learning_rate", "outside (0,1]")?;
        check((0.0..=1.0).contains(&self.experience_step), "experience_step", "outside [0,1]")?;
        check(
            0.0 <= self.persuasion_min && self.persuasion_min <= self.persuasion_max && self.persuasion_max <= 1.0,
            "persuasion_min",
            "need 0 <= persuasion_min <= persuasion_max <= 1",
        )?;
        check((-1.0..=1.0).contains(&self.aspiration), "aspiration", "outside [-1,1]")?;
        check(self.setup_rounds >= 1, "setup_rounds", "must be at least 1")
    }
}

/// Importance-weighted mean evaluation; 0 when all importances are 0.
pub fn satisfaction_of(importance: &[f64], evaluations: &[Vec<f64>], alternative: usize) -> f64 {
    let total: f64 = importance.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let weighted: f64 = importance.iter().zip(evaluations).map(|(w, row)| w * row[alternative]).sum();
    weighted / total
}

/// `2·min(P, N) / (P + N)` over the weighted positive and negative evaluations.
pub fn dissonance_of(importance: &[f64], evaluations: &[Vec<f64>], alternative: usize) -> f64 {
    let (mut pos, mut neg) = (0.0, 0.0);
    for (w, row) in importance.iter().zip(evaluations) {
        let e = row[alternative];
        if e > 0.0 {
            pos += w * e;
        } else if e < 0.0 {
            neg += w * -e;
        }
    }
    if pos + neg == 0.0 {
        return 0.0;
    }
    2.0 * pos.min(neg) / (pos + neg)
}

/// Best alternative by satisfaction, then lower dissonance, then catalog order.
pub fn best_alternative(satisfaction: &[f64], dissonance: &[f64]) -> usize {
    let mut best = 0;
    for a in 1..satisfaction.len() {
        let better = satisfaction[a] > satisfaction[best]
            || (satisfaction[a] == satisfaction[best] && dissonance[a] < dissonance[best]);
        if better {
            best = a;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumatAgent {
    pub person_id: u32,
    importance: Vec<f64>,
    /// `evaluations[motive][alternative]`.
    evaluations: Vec<Vec<f64>>,
    satisfaction: Vec<f64>,
    dissonance: Vec<f64>,
    choice: usize,
    pub persuasion: f64,
}

impl HumatAgent {
    /// Builds an agent with fresh caches; the choice is the best alternative.
    pub fn new(person_id: u32, importance: Vec<f64>, evaluations: Vec<Vec<f64>>, persuasion: f64) -> Self {
        assert_eq!(importance.len(), evaluations.len(), "one evaluation row per motive");
        let alternatives = evaluations.first().map_or(0, Vec::len);
        assert!(alternatives > 0, "at least one alternative");
        assert!(evaluations.iter().all(|r| r.len() == alternatives), "ragged evaluation matrix");
        let mut agent = Self {
            person_id,
            importance,
            evaluations,
            satisfaction: Vec::new(),
            dissonance: Vec::new(),
            choice: 0,
            persuasion,
        };
        agent.refresh();
        agent.choose();
        agent
    }

    pub fn alternatives(&self) -> usize {
        self.satisfaction.len()
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn evaluations(&self) -> &[Vec<f64>] {
        &self.evaluations
    }

    pub fn evaluation_column(&self, alternative: usize) -> Vec<f64> {
        self.evaluations.iter().map(|r| r[alternative]).collect()
    }

    pub fn choice(&self) -> usize {
        self.choice
    }

    /// Overrides the current choice without re-evaluating.
    pub fn set_choice(&mut self, alternative: usize) {
        assert!(alternative < self.alternatives());
        self.choice = alternative;
    }

    pub fn satisfaction(&self, alternative: usize) -> Result<f64, HumatError> {
        self.satisfaction.get(alternative).copied().ok_or(HumatError::UnknownAlternative(alternative))
    }

    pub fn dissonance(&self, alternative: usize) -> Result<f64, HumatError> {
        self.dissonance.get(alternative).copied().ok_or(HumatError::UnknownAlternative(alternative))
    }

    pub fn satisfactions(&self) -> &[f64] {
        &self.satisfaction
    }

    pub fn dissonances(&self) -> &[f64] {
        &self.dissonance
    }

    /// Replaces one evaluation and refreshes the caches.
    pub fn set_evaluation(&mut self, motive: usize, alternative: usize, value: f64) {
        self.evaluations[motive][alternative] = value.clamp(-1.0, 1.0);
        self.refresh();
    }

    pub(crate) fn evaluations_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.evaluations
    }

    /// Recomputes satisfaction and dissonance caches.
    pub fn refresh(&mut self) {
        let n = self.evaluations.first().map_or(0, Vec::len);
        self.satisfaction = (0..n).map(|a| satisfaction_of(&self.importance, &self.evaluations, a)).collect();
        self.dissonance = (0..n).map(|a| dissonance_of(&self.importance, &self.evaluations, a)).collect();
    }

    /// Re-chooses from the current caches; returns the new choice.
    pub fn choose(&mut self) -> usize {
        self.choice = best_alternative(&self.satisfaction, &self.dissonance);
        self.choice
    }
}

fn draw_importance(rule: &ImportanceRule, rng: &mut RandomStream) -> f64 {
    match rule.shape {
        ImportanceShape::Normal => {
            let z: f64 = StandardNormal.sample(rng);
            (rule.mean + rule.sd * z).clamp(0.0, 1.0)
        }
        ImportanceShape::Uniform => {
            let half = 3f64.sqrt() * rule.sd;
            let u = rng.next_f64();
            (rule.mean - half + 2.0 * half * u).clamp(0.0, 1.0)
        }
    }
}

/// One agent per person, in population order.
pub fn init_agents(
    population: &Population,
    spec: &MotiveSpec,
    params: &HumatParams,
    rng: &mut RandomStream,
) -> Result<Vec<HumatAgent>, HumatError> {
    let alternatives = spec.priors.first().map_or(0, Vec::len);
    population
        .persons
        .iter()
        .map(|p| {
            let importance = (0..spec.motives.len())
                .map(|m| {
                    let rule = spec.rule_for(m, &p.attributes).ok_or_else(|| HumatError::MissingStratum {
                        person_id: p.person_id,
                        motive: spec.motives[m].name.clone(),
                    })?;
                    Ok(draw_importance(rule, rng))
                })
                .collect::<Result<Vec<_>, HumatError>>()?;
            let evaluations = spec
                .priors
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|prior| {
                            let z: f64 = StandardNormal.sample(rng);
                            (prior.mean + prior.sd * z).clamp(-1.0, 1.0)
                        })
                        .collect()
                })
                .collect();
            let span = params.persuasion_max - params.persuasion_min;
            let persuasion = params.persuasion_min + span * rng.next_f64();
            debug_assert!(alternatives > 0);
            Ok(HumatAgent::new(p.person_id, importance, evaluations, persuasion))
        })
        .collect()
}

/// Nudges the experiential evaluations of the used alternative by `±step`.
///
/// Failed deliveries and lockers farther than `walk_max_km` count as bad
/// experiences.
pub fn apply_experience(
    agent: &mut HumatAgent,
    spec: &MotiveSpec,
    outcome: &DeliveryOutcome,
    alternative: usize,
    step: f64,
    walk_max_km: f64,
) {
    let bad = !outcome.success || outcome.locker_distance_km.is_some_and(|d| d > walk_max_km);
    let delta = if bad { -step } else { step };
    for (m, motive) in spec.motives.iter().enumerate() {
        if motive.group == MotiveGroup::Experiential {
            let e = &mut agent.evaluations_mut()[m][alternative];
            *e = (*e + delta).clamp(-1.0, 1.0);
        }
    }
    agent.refresh();
}
