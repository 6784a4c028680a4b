//! Pieces shared by every episode loop: exploration schedules, episode seeds
//! and the observe-gate-exchange part of a step.

use alloc::vec::Vec;

use crate::comm::{cp_decide, exchange, CommDecision, CommPolicy, GateMode, ObservationSet};
use crate::env::Environment;
use crate::error::Result;
use crate::rng::{derive_seed, Rng64};

/// Linear annealing from `start` to `end` over the first `fraction` of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(value: f64) -> Self {
        Self {
            start: value,
            end: value,
            fraction: 1.0,
        }
    }

    pub fn value(&self, episode: usize, total: usize) -> f64 {
        let span = self.fraction * total as f64;
        if span <= 0.0 {
            return self.end;
        }
        let progress = episode as f64 / span;
        if progress >= 1.0 {
            return self.end;
        }
        self.start + (self.end - self.start) * progress
    }
}

/// Environment seed of episode `k` in a run seeded with `seed`.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64)
}

/// What one step of communication produced before any attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CommStep {
    pub observations: Vec<Vec<f64>>,
    pub gate_features: Vec<Vec<f64>>,
    pub decision: CommDecision,
    pub messages: ObservationSet,
}

/// Observes, decides the gates and exchanges messages.
pub fn communicate<E: Environment>(
    env: &E,
    state: &E::State,
    cp: &CommPolicy,
    mode: GateMode,
    gate_rng: &mut Rng64,
) -> Result<CommStep> {
    let observations = env.observe(state);
    let gate_features = cp.agent_features(&observations)?;
    let decision = cp_decide(cp, &gate_features, mode, gate_rng)?;
    let messages = exchange(&observations, &decision, &env.message_encoder())?;
    Ok(CommStep {
        observations,
        gate_features,
        decision,
        messages,
    })
}
