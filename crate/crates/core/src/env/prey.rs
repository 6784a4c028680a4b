//! Predator-prey: predators cooperate to corner an evasive prey.
//!
//! Predators move first. The prey is captured when at least two predators
//! stand within distance 1 of it; a captured prey respawns away from every
//! predator. Otherwise the prey moves to the neighboring cell that maximizes
//! its distance to the closest predator, breaking ties uniformly.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_actions, euclidean, DistanceTable, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::{index, stream, stream_rng, Rng64};

/// Stay, up, down, left, right.
pub const MOVES: [(i64, i64); 5] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];
pub const OTHER_SLOTS: usize = 4;
const OTHER_WIDTH: usize = 3;
const OWN_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPreyConfig {
    pub n_predators: usize,
    pub size: usize,
    pub horizon: usize,
    /// Euclidean visibility radius.
    pub vision: f64,
    /// Predators within this distance of the prey count toward a capture.
    pub capture_radius: f64,
    pub predators_to_capture: usize,
    /// Captures needed to win.
    pub capture_threshold: usize,
    pub capture_reward: f64,
    /// Weight of the per-step penalty on the prey's distance to its second
    /// closest predator, normalized by the grid diagonal.
    pub distance_weight: f64,
    /// Predators move only on every `predator_period`-th step; 1 keeps both
    /// sides equally fast.
    pub predator_period: usize,
}

impl Default for PredatorPreyConfig {
    fn default() -> Self {
        Self {
            n_predators: 8,
            size: 10,
            horizon: 60,
            vision: 2.0,
            capture_radius: 1.0,
            predators_to_capture: 2,
            capture_threshold: 3,
            capture_reward: 1.0,
            distance_weight: 0.1,
            predator_period: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPreyState {
    pub predators: Vec<(i64, i64)>,
    pub prey: (i64, i64),
    pub captures: usize,
    pub t: usize,
    pub terminal: bool,
    rng: Rng64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPrey {
    config: PredatorPreyConfig,
}

impl PredatorPrey {
    pub fn new(config: PredatorPreyConfig) -> Result<Self> {
        let c = &config;
        if c.n_predators < c.predators_to_capture || c.predators_to_capture == 0 {
            return Err(Error::InvalidConfig(
                "predator count must cover the capture requirement".into(),
            ));
        }
        if c.size < 3 {
            return Err(Error::InvalidConfig("predator-prey grid must be at least 3x3".into()));
        }
        if c.horizon == 0 || c.capture_threshold == 0 || c.predator_period == 0 {
            return Err(Error::InvalidConfig("horizon and capture threshold must be positive".into()));
        }
        if !(c.vision > 0.0) || !(c.capture_radius > 0.0) || c.distance_weight < 0.0 {
            return Err(Error::InvalidConfig("radii must be positive and distance weight non-negative".into()));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.config
    }

    fn diagonal(&self) -> f64 {
        libm::sqrt(2.0) * (self.config.size - 1) as f64
    }

    fn clamp(&self, p: (i64, i64)) -> (i64, i64) {
        let hi = self.config.size as i64 - 1;
        (p.0.clamp(0, hi), p.1.clamp(0, hi))
    }

    fn random_cell(&self, rng: &mut Rng64) -> (i64, i64) {
        let s = self.config.size;
        (index(rng, s) as i64, index(rng, s) as i64)
    }

    fn nearest(predators: &[(i64, i64)], p: (i64, i64)) -> f64 {
        predators.iter().map(|&q| euclidean(p, q)).fold(f64::INFINITY, f64::min)
    }

    /// Uniform cell with no predator inside the capture radius.
    fn respawn(&self, predators: &[(i64, i64)], rng: &mut Rng64) -> (i64, i64) {
        let s = self.config.size as i64;
        let free: Vec<(i64, i64)> = (0..s)
            .flat_map(|x| (0..s).map(move |y| (x, y)))
            .filter(|&c| Self::nearest(predators, c) > self.config.capture_radius)
            .collect();
        if free.is_empty() {
            self.random_cell(rng)
        } else {
            free[index(rng, free.len())]
        }
    }

    pub fn capturing(&self, state: &PredatorPreyState) -> Vec<usize> {
        (0..state.predators.len())
            .filter(|&i| euclidean(state.predators[i], state.prey) <= self.config.capture_radius)
            .collect()
    }

    fn second_nearest(&self, predators: &[(i64, i64)], prey: (i64, i64)) -> f64 {
        let mut d: Vec<f64> = predators.iter().map(|&q| euclidean(prey, q)).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[1.min(d.len() - 1)]
    }

    fn prey_visible(&self, state: &PredatorPreyState, i: usize) -> bool {
        euclidean(state.predators[i], state.prey) <= self.config.vision
    }
}

impl Environment for PredatorPrey {
    type State = PredatorPreyState;

    fn name(&self) -> &'static str {
        "predator_prey"
    }

    fn n_agents(&self) -> usize {
        self.config.n_predators
    }

    fn n_actions(&self) -> usize {
        MOVES.len()
    }

    fn obs_dim(&self) -> usize {
        OWN_FEATURES + OTHER_SLOTS * OTHER_WIDTH
    }

    fn attr_dim(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn visibility_radius(&self) -> f64 {
        self.config.vision
    }

    fn reward_floor(&self) -> f64 {
        -self.config.distance_weight + self.config.capture_reward.min(0.0)
    }

    fn reward_ceiling(&self) -> f64 {
        self.config.capture_reward.max(0.0)
    }

    /// Minus the mean predator-prey distance, in grid diagonals.
    fn potential(&self, state: &PredatorPreyState) -> f64 {
        let total: f64 = state.predators.iter().map(|&q| euclidean(q, state.prey)).sum();
        -total / (state.predators.len() as f64 * self.diagonal())
    }

    fn reset(&self, seed: u64) -> PredatorPreyState {
        let mut rng = stream_rng(seed, stream::ENV);
        let predators: Vec<(i64, i64)> = (0..self.config.n_predators).map(|_| self.random_cell(&mut rng)).collect();
        let prey = self.respawn(&predators, &mut rng);
        PredatorPreyState {
            predators,
            prey,
            captures: 0,
            t: 0,
            terminal: false,
            rng,
        }
    }

    fn step(&self, state: &PredatorPreyState, actions: &[usize]) -> Result<StepOutcome<PredatorPreyState>> {
        if state.terminal {
            return Err(Error::Terminated);
        }
        check_actions(actions, self.n_agents(), MOVES.len())?;
        let mut next = state.clone();
        next.t += 1;
        if state.t % self.config.predator_period == 0 {
            for (p, &a) in next.predators.iter_mut().zip(actions) {
                let (dx, dy) = MOVES[a];
                *p = self.clamp((p.0 + dx, p.1 + dy));
            }
        }

        let n = self.n_agents();
        let mut agent_rewards = vec![0.0; n];
        let mut team_reward = 0.0;
        let capturing = self.capturing(&next);
        if capturing.len() >= self.config.predators_to_capture {
            team_reward += self.config.capture_reward;
            let share = self.config.capture_reward / capturing.len() as f64;
            for &i in &capturing {
                agent_rewards[i] += share;
            }
            next.captures += 1;
            next.prey = self.respawn(&next.predators, &mut next.rng);
        } else {
            let mut best = f64::NEG_INFINITY;
            let mut options: Vec<(i64, i64)> = Vec::with_capacity(MOVES.len());
            for (dx, dy) in MOVES {
                let cell = self.clamp((next.prey.0 + dx, next.prey.1 + dy));
                if options.contains(&cell) {
                    continue;
                }
                let d = Self::nearest(&next.predators, cell);
                if d > best {
                    best = d;
                    options.clear();
                    options.push(cell);
                } else if d == best {
                    options.push(cell);
                }
            }
            next.prey = options[index(&mut next.rng, options.len())];
        }

        if self.config.distance_weight > 0.0 {
            let shaping = -self.config.distance_weight * self.second_nearest(&next.predators, next.prey) / self.diagonal();
            team_reward += shaping;
            for r in agent_rewards.iter_mut() {
                *r += shaping / n as f64;
            }
        }

        next.terminal = next.captures >= self.config.capture_threshold || next.t >= self.config.horizon;
        let win = next
            .terminal
            .then_some(next.captures >= self.config.capture_threshold);
        Ok(StepOutcome {
            state: next,
            team_reward,
            agent_rewards,
            win,
        })
    }

    fn observe(&self, state: &PredatorPreyState) -> Vec<Vec<f64>> {
        let scale = (self.config.size - 1) as f64;
        let r = self.config.vision;
        (0..self.n_agents())
            .map(|i| {
                let me = state.predators[i];
                let mut o = vec![0.0; self.obs_dim()];
                o[3] = me.0 as f64 / scale;
                o[4] = me.1 as f64 / scale;
                if self.prey_visible(state, i) {
                    o[0] = 1.0;
                    o[1] = state.prey.0 as f64 / scale;
                    o[2] = state.prey.1 as f64 / scale;
                    o[5] = (state.prey.0 - me.0) as f64 / r;
                    o[6] = (state.prey.1 - me.1) as f64 / r;
                }
                let visible = self.visible(state, i);
                o[7] = visible.len() as f64 / OTHER_SLOTS as f64;
                let mut others: Vec<(f64, usize)> =
                    visible.iter().map(|&j| (euclidean(me, state.predators[j]), j)).collect();
                others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for (slot, &(_, j)) in others.iter().take(OTHER_SLOTS).enumerate() {
                    let base = OWN_FEATURES + slot * OTHER_WIDTH;
                    o[base] = 1.0;
                    o[base + 1] = (state.predators[j].0 - me.0) as f64 / r;
                    o[base + 2] = (state.predators[j].1 - me.1) as f64 / r;
                }
                o
            })
            .collect()
    }

    fn distances(&self, state: &PredatorPreyState) -> DistanceTable {
        DistanceTable::from_fn(self.n_agents(), |i, j| euclidean(state.predators[i], state.predators[j]))
    }

    fn attributes(&self, state: &PredatorPreyState) -> Vec<Vec<f64>> {
        let scale = (self.config.size - 1) as f64;
        (0..self.n_agents())
            .map(|i| {
                let p = state.predators[i];
                let seen = self.prey_visible(state, i);
                let d = if seen {
                    euclidean(p, state.prey) / self.diagonal()
                } else {
                    1.0
                };
                vec![p.0 as f64 / scale, p.1 as f64 / scale, seen as u8 as f64, d]
            })
            .collect()
    }

    fn positions(&self, state: &PredatorPreyState) -> Vec<(i64, i64)> {
        state.predators.clone()
    }

    fn time(&self, state: &PredatorPreyState) -> usize {
        state.t
    }

    fn is_terminal(&self, state: &PredatorPreyState) -> bool {
        state.terminal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PredatorPrey {
        PredatorPrey::new(PredatorPreyConfig::default()).unwrap()
    }

    fn placed(env: &PredatorPrey, predators: Vec<(i64, i64)>, prey: (i64, i64)) -> PredatorPreyState {
        let mut s = env.reset(0);
        s.predators = predators;
        s.prey = prey;
        s
    }

    #[test]
    fn reset_is_deterministic_and_capture_free() {
        let e = env();
        for seed in 0..50 {
            let s = e.reset(seed);
            assert_eq!(s, e.reset(seed));
            assert_eq!(s.predators.len(), 8);
            assert!(e.capturing(&s).len() < 2);
        }
    }

    #[test]
    fn no_capture_gives_no_bonus() {
        let e = PredatorPrey::new(PredatorPreyConfig {
            distance_weight: 0.0,
            ..Default::default()
        })
        .unwrap();
        let far = vec![(0, 0); 8];
        let s = placed(&e, far, (9, 9));
        let out = e.step(&s, &[0; 8]).unwrap();
        assert_eq!(out.team_reward, 0.0);
        assert_eq!(out.state.captures, 0);
    }

    #[test]
    fn two_adjacent_predators_capture() {
        let e = PredatorPrey::new(PredatorPreyConfig {
            distance_weight: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut preds = vec![(0, 0); 8];
        preds[2] = (4, 5);
        preds[5] = (6, 5);
        let s = placed(&e, preds, (5, 5));
        let out = e.step(&s, &[0; 8]).unwrap();
        assert_eq!(out.team_reward, 1.0);
        assert_eq!(out.agent_rewards[2], 0.5);
        assert_eq!(out.agent_rewards[5], 0.5);
        assert_eq!(out.state.captures, 1);
        assert!(e.capturing(&out.state).is_empty());
    }

    #[test]
    fn prey_flees_the_closest_predator() {
        let e = env();
        let mut preds = vec![(0, 0); 8];
        preds[0] = (3, 5);
        let s = placed(&e, preds, (5, 5));
        let out = e.step(&s, &[0; 8]).unwrap();
        assert_eq!(out.state.prey, (6, 5));
    }

    #[test]
    fn threshold_captures_win_early() {
        let e = env();
        let mut preds = vec![(0, 0); 8];
        preds[0] = (4, 5);
        preds[1] = (6, 5);
        let mut s = placed(&e, preds, (5, 5));
        s.captures = 2;
        let out = e.step(&s, &[0; 8]).unwrap();
        assert_eq!(out.win, Some(true));
        assert_eq!(out.state.t, 1);
    }

    #[test]
    fn episode_ends_at_horizon() {
        let e = env();
        let mut s = e.reset(9);
        let mut steps = 0;
        loop {
            let out = e.step(&s, &[0; 8]).unwrap();
            steps += 1;
            assert!(out.team_reward >= e.reward_floor() - 1e-12);
            assert!(out.team_reward <= e.reward_ceiling() + 1e-12);
            if out.is_terminal() {
                break;
            }
            s = out.state;
        }
        assert!(steps <= 60);
    }

    #[test]
    fn visibility_matches_radius() {
        let e = env();
        let mut preds = vec![(9, 9); 8];
        preds[0] = (0, 0);
        preds[1] = (1, 1);
        preds[2] = (2, 2);
        let s = placed(&e, preds, (5, 0));
        assert_eq!(e.visible(&s, 0), vec![1]);
        assert_eq!(e.visible(&s, 1), vec![0, 2]);
    }
}
