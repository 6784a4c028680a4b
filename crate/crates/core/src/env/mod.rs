//! Cooperative gridworld tasks.
//!
//! Environments are immutable configurations; episodes are value-like
//! [`Environment::State`]s advanced by [`Environment::step`]. Any randomness
//! inside a transition (prey tie-breaks, goal draws) comes from a generator
//! carried in the state, so a state plus a joint action determines the next
//! state.

pub mod prey;
pub mod relay;
pub mod traffic;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use crate::comm::MessageEncoder;
use crate::error::{Error, Result};

pub use prey::{PredatorPrey, PredatorPreyConfig, PredatorPreyState};
pub use relay::{RelayConfig, RelayState, RelayTask};
pub use traffic::{CarStatus, TrafficJunction, TrafficJunctionConfig, TrafficState};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub state: S,
    pub team_reward: f64,
    /// Per-agent share of the reward; only the reward-based masker reads it.
    pub agent_rewards: Vec<f64>,
    /// `Some` exactly when `state` is terminal.
    pub win: Option<bool>,
}

impl<S> StepOutcome<S> {
    pub fn is_terminal(&self) -> bool {
        self.win.is_some()
    }
}

/// Win flag of a terminal outcome.
pub fn is_win<S>(outcome: &StepOutcome<S>) -> Result<bool> {
    outcome.win.ok_or(Error::NotTerminal)
}

/// Symmetric pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    n: usize,
    values: Vec<f64>,
}

impl DistanceTable {
    /// Builds the table from a pairwise function evaluated once per
    /// unordered pair.
    pub fn from_fn(n: usize, mut dist: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = dist(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.get(i, i) == 0.0 && (0..self.n).all(|j| self.get(i, j) == self.get(j, i) && self.get(i, j) >= 0.0)
        })
    }
}

pub fn manhattan(a: (i64, i64), b: (i64, i64)) -> f64 {
    ((a.0 - b.0).abs() + (a.1 - b.1).abs()) as f64
}

pub fn euclidean(a: (i64, i64), b: (i64, i64)) -> f64 {
    let dx = (a.0 - b.0) as f64;
    let dy = (a.1 - b.1) as f64;
    libm::sqrt(dx * dx + dy * dy)
}

pub trait Environment {
    type State: Clone + PartialEq + Debug;

    fn name(&self) -> &'static str;
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Length of every local observation vector.
    fn obs_dim(&self) -> usize;
    /// Length of every vertex attribute vector.
    fn attr_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn visibility_radius(&self) -> f64;
    /// Analytic lower bound of the per-step team reward.
    fn reward_floor(&self) -> f64;
    /// Analytic upper bound of the per-step team reward.
    fn reward_ceiling(&self) -> f64;

    fn reset(&self, seed: u64) -> Self::State;
    fn step(&self, state: &Self::State, actions: &[usize]) -> Result<StepOutcome<Self::State>>;
    fn observe(&self, state: &Self::State) -> Vec<Vec<f64>>;
    fn distances(&self, state: &Self::State) -> DistanceTable;
    /// Vertex attributes for the interaction graph.
    fn attributes(&self, state: &Self::State) -> Vec<Vec<f64>>;
    fn positions(&self, state: &Self::State) -> Vec<(i64, i64)>;
    fn time(&self, state: &Self::State) -> usize;
    fn is_terminal(&self, state: &Self::State) -> bool;

    /// Agents whose actions currently matter; inactive agents are skipped by
    /// value decomposition.
    fn active(&self, _state: &Self::State) -> Vec<bool> {
        vec![true; self.n_agents()]
    }

    /// State potential used only to shape team-learning targets; never part
    /// of the reward.
    fn potential(&self, _state: &Self::State) -> f64 {
        0.0
    }

    fn message_encoder(&self) -> MessageEncoder {
        MessageEncoder::leading(self.obs_dim())
    }

    /// Agents `i` can see: those within the visibility radius.
    fn visible(&self, state: &Self::State, i: usize) -> Vec<usize> {
        let d = self.distances(state);
        let r = self.visibility_radius();
        (0..self.n_agents()).filter(|&j| j != i && d.get(i, j) <= r).collect()
    }
}

pub(crate) fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n_agents {
        return Err(Error::Shape {
            what: "joint action",
            expected: n_agents,
            found: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
        return Err(Error::ActionOutOfRange {
            agent,
            action,
            n_actions,
        });
    }
    Ok(())
}
