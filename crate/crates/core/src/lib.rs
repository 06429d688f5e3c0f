//! Agent-based last-mile parcel delivery simulation.
//!
//! A synthetic population with a multiplex social network makes delivery
//! channel choices (home courier, parcel locker, crowdshipping). Daily parcel
//! demand flows through a carrier market and courier tour scheduling, and
//! delivery experiences feed back into the consumers' evaluations.

pub mod demand;
pub mod geo;
pub mod humat;
pub mod market;
pub mod orchestrator;
pub mod popsynth;
pub mod rng;
pub mod scenario;
pub mod scheduling;
pub mod socnet;

pub use rng::RandomStream;
pub use scenario::{load_scenario, Channel, ScenarioConfig, ScenarioError};
