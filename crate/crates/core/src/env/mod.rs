//! Simulated RAN environment: traffic, queues, the E2 link, KPM
//! observations and the slot loop.

pub mod e2;
pub mod observation;
pub mod queue;
pub mod scenario;
pub mod trace;
pub mod world;

pub use e2::E2Link;
pub use observation::{build_observation, FeatureBounds, SlotObservation, UeSlotKpm, FEATURES_PER_UE};
pub use queue::{TrafficSource, UeQueue};
pub use scenario::{DisconnectRule, PathlossModel, Scenario};
pub use trace::{TraceRow, TraceWriter};
pub use world::{SlotOutcome, SubframeRecord, World};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
}

/// Anything the learners can interact with one slot at a time.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Current state vector.
    fn state(&self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}
