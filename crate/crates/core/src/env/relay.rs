//! Relay: a diagnostic task whose critical channel is known by construction.
//!
//! Agents stand on a line. Each episode one agent is the actor and one or two
//! sources stand right next to it; every other agent is a bystander placed
//! out of sight of everyone. Each step a fresh goal is drawn. Sources observe
//! the goal one-hot (plus noise), everyone else observes noise only. The team
//! is rewarded when the actor's action equals the goal, so the source-actor
//! channels carry all useful information and the rest carry noise.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_actions, DistanceTable, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::{index, stream, stream_rng, uniform, Rng64};

pub const RELAY_OBS_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RelayConfig {
    pub n_agents: usize,
    pub n_goals: usize,
    pub horizon: usize,
    /// Correct actor steps needed to win.
    pub win_threshold: usize,
    /// Sources adjacent to the actor, 1 or 2.
    pub sources: usize,
    /// Uniform observation noise amplitude.
    pub noise: f64,
    /// Keep agent 0 as actor and agents `1..=sources` as sources.
    pub fixed_roles: bool,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            n_goals: 4,
            horizon: 4,
            win_threshold: 3,
            sources: 1,
            noise: 0.1,
            fixed_roles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayState {
    pub actor: usize,
    pub sources: Vec<usize>,
    pub cells: Vec<i64>,
    pub goal: usize,
    noise: Vec<Vec<f64>>,
    pub correct: usize,
    pub t: usize,
    pub terminal: bool,
    rng: Rng64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayTask {
    config: RelayConfig,
}

impl RelayTask {
    pub fn new(config: RelayConfig) -> Result<Self> {
        let c = &config;
        if !(1..=2).contains(&c.sources) {
            return Err(Error::InvalidConfig("relay supports 1 or 2 sources".into()));
        }
        if c.n_agents < c.sources + 1 {
            return Err(Error::InvalidConfig("relay needs an actor plus its sources".into()));
        }
        if !(2..=RELAY_OBS_DIM).contains(&c.n_goals) {
            return Err(Error::InvalidConfig("relay goal count must be in 2..=8".into()));
        }
        if c.horizon == 0 || c.win_threshold > c.horizon {
            return Err(Error::InvalidConfig("relay win threshold must fit in the horizon".into()));
        }
        if c.noise < 0.0 || !c.noise.is_finite() {
            return Err(Error::InvalidConfig("relay noise must be finite and non-negative".into()));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &RelayConfig {
        &self.config
    }

    /// Channels between the actor and its sources, as `(low, high)` pairs.
    pub fn critical_pairs(&self, state: &RelayState) -> Vec<(usize, usize)> {
        state
            .sources
            .iter()
            .map(|&s| (s.min(state.actor), s.max(state.actor)))
            .collect()
    }

    fn line_length(&self) -> usize {
        // group plus bystanders, separated by two empty cells
        let groups = 1 + self.config.n_agents - 1 - self.config.sources;
        (self.config.sources + 1) + (groups - 1) + 2 * (groups - 1)
    }

    fn draw_signal(&self, state: &mut RelayState) {
        state.goal = index(&mut state.rng, self.config.n_goals);
        let a = self.config.noise;
        for row in state.noise.iter_mut() {
            for v in row.iter_mut() {
                *v = uniform(&mut state.rng, -a, a);
            }
        }
    }
}

impl Environment for RelayTask {
    type State = RelayState;

    fn name(&self) -> &'static str {
        "relay"
    }

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn n_actions(&self) -> usize {
        self.config.n_goals
    }

    fn obs_dim(&self) -> usize {
        RELAY_OBS_DIM
    }

    fn attr_dim(&self) -> usize {
        3
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn visibility_radius(&self) -> f64 {
        1.0
    }

    fn reward_floor(&self) -> f64 {
        0.0
    }

    fn reward_ceiling(&self) -> f64 {
        1.0
    }

    fn reset(&self, seed: u64) -> RelayState {
        let mut rng = stream_rng(seed, stream::ENV);
        let n = self.config.n_agents;
        let mut order: Vec<usize> = (0..n).collect();
        if !self.config.fixed_roles {
            for k in (1..n).rev() {
                let j = index(&mut rng, k + 1);
                order.swap(k, j);
            }
        }
        let actor = order[0];
        let sources: Vec<usize> = order[1..=self.config.sources].to_vec();
        let bystanders = &order[self.config.sources + 1..];

        // the actor sits between its sources when there are two
        let mut group = vec![sources[0], actor];
        if self.config.sources == 2 {
            group.push(sources[1]);
        }
        if !self.config.fixed_roles && index(&mut rng, 2) == 1 {
            group.reverse();
        }
        let mut blocks: Vec<Vec<usize>> = vec![group];
        blocks.extend(bystanders.iter().map(|&b| vec![b]));
        if !self.config.fixed_roles {
            for k in (1..blocks.len()).rev() {
                let j = index(&mut rng, k + 1);
                blocks.swap(k, j);
            }
        }
        let mut cells = vec![0i64; n];
        let mut x = 0i64;
        for block in &blocks {
            for &a in block {
                cells[a] = x;
                x += 1;
            }
            x += 2;
        }
        let mut state = RelayState {
            actor,
            sources,
            cells,
            goal: 0,
            noise: vec![vec![0.0; RELAY_OBS_DIM]; n],
            correct: 0,
            t: 0,
            terminal: false,
            rng,
        };
        self.draw_signal(&mut state);
        state
    }

    fn step(&self, state: &RelayState, actions: &[usize]) -> Result<StepOutcome<RelayState>> {
        if state.terminal {
            return Err(Error::Terminated);
        }
        check_actions(actions, self.n_agents(), self.config.n_goals)?;
        let mut next = state.clone();
        next.t += 1;
        let hit = actions[state.actor] == state.goal;
        let team_reward = if hit { 1.0 } else { 0.0 };
        if hit {
            next.correct += 1;
        }
        let n = self.n_agents();
        let agent_rewards = vec![team_reward / n as f64; n];
        next.terminal = next.t >= self.config.horizon;
        let win = next.terminal.then_some(next.correct >= self.config.win_threshold);
        if !next.terminal {
            self.draw_signal(&mut next);
        }
        Ok(StepOutcome {
            state: next,
            team_reward,
            agent_rewards,
            win,
        })
    }

    fn observe(&self, state: &RelayState) -> Vec<Vec<f64>> {
        (0..self.n_agents())
            .map(|i| {
                let mut o = state.noise[i].clone();
                if state.sources.contains(&i) {
                    o[state.goal] += 1.0;
                }
                o
            })
            .collect()
    }

    fn distances(&self, state: &RelayState) -> DistanceTable {
        DistanceTable::from_fn(self.n_agents(), |i, j| (state.cells[i] - state.cells[j]).abs() as f64)
    }

    fn attributes(&self, state: &RelayState) -> Vec<Vec<f64>> {
        let scale = self.line_length().max(2) as f64 - 1.0;
        (0..self.n_agents())
            .map(|i| {
                vec![
                    state.cells[i] as f64 / scale,
                    0.0,
                    state.sources.contains(&i) as u8 as f64,
                ]
            })
            .collect()
    }

    fn positions(&self, state: &RelayState) -> Vec<(i64, i64)> {
        state.cells.iter().map(|&x| (x, 0)).collect()
    }

    fn time(&self, state: &RelayState) -> usize {
        state.t
    }

    fn is_terminal(&self, state: &RelayState) -> bool {
        state.terminal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(cfg: RelayConfig) -> RelayTask {
        RelayTask::new(cfg).unwrap()
    }

    #[test]
    fn sources_neighbor_the_actor_and_bystanders_are_isolated() {
        let e = task(RelayConfig::default());
        for seed in 0..100 {
            let s = e.reset(seed);
            assert_eq!(e.visible(&s, s.actor), s.sources.clone());
            for b in 0..4 {
                if b != s.actor && !s.sources.contains(&b) {
                    assert!(e.visible(&s, b).is_empty());
                }
            }
        }
    }

    #[test]
    fn two_sources_flank_the_actor() {
        let e = task(RelayConfig {
            sources: 2,
            ..Default::default()
        });
        for seed in 0..50 {
            let s = e.reset(seed);
            let mut v = e.visible(&s, s.actor);
            v.sort();
            let mut src = s.sources.clone();
            src.sort();
            assert_eq!(v, src);
            assert_eq!(e.critical_pairs(&s).len(), 2);
        }
    }

    #[test]
    fn only_sources_see_the_goal() {
        let e = task(RelayConfig {
            noise: 0.0,
            ..Default::default()
        });
        let s = e.reset(5);
        let o = e.observe(&s);
        for (i, oi) in o.iter().enumerate() {
            let total: f64 = oi.iter().sum();
            if s.sources.contains(&i) {
                assert_eq!(oi[s.goal], 1.0);
                assert_eq!(total, 1.0);
            } else {
                assert_eq!(total, 0.0);
            }
        }
    }

    #[test]
    fn oracle_actor_always_wins_and_blind_actor_rarely() {
        let e = task(RelayConfig::default());
        let mut blind_wins = 0;
        for seed in 0..400 {
            let mut s = e.reset(seed);
            let mut blind = e.reset(seed);
            loop {
                let a = vec![s.goal; 4];
                let out = e.step(&s, &a).unwrap();
                assert_eq!(out.team_reward, 1.0);
                let bo = e.step(&blind, &[0; 4]).unwrap();
                if out.is_terminal() {
                    assert_eq!(out.win, Some(true));
                    blind_wins += bo.win.unwrap() as usize;
                    break;
                }
                s = out.state;
                blind = bo.state;
            }
        }
        // P(at least 3 of 4 right at 1/4 each) is about 0.05
        assert!(blind_wins < 50, "{blind_wins}");
    }

    #[test]
    fn fixed_roles_pin_actor_and_source() {
        let e = task(RelayConfig {
            n_agents: 2,
            fixed_roles: true,
            ..Default::default()
        });
        let s = e.reset(11);
        assert_eq!(s.actor, 0);
        assert_eq!(s.sources, vec![1]);
        assert_eq!(e.critical_pairs(&s), vec![(0, 1)]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RelayTask::new(RelayConfig {
            sources: 3,
            ..Default::default()
        })
        .is_err());
        assert!(RelayTask::new(RelayConfig {
            n_agents: 2,
            sources: 2,
            ..Default::default()
        })
        .is_err());
    }
}
