//! The target team: a shared per-agent Q network over the local observation
//! and received message slots, trained by value decomposition (the team value
//! is the unweighted sum of the active agents' chosen-action values) jointly
//! with the communication policy.

use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{train_cp_step, ChannelBits, CommPolicy, CpEpisode, CpStep, GateMode, ObservationSet};
use crate::env::{Environment, StepOutcome};
use crate::error::{check_len, Error, Result};
use crate::nn::{apply_update, DenseNetwork, ForwardCache, Gradients, OptimizerKind, OptimizerState, TargetCopy};
use crate::replay::{pack, ReplayBuffer};
use crate::rng::{bernoulli, index, stream, stream_rng, Rng64};
use crate::rollout::{communicate, episode_seed, EpsilonSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct TeamPolicy {
    net: DenseNetwork,
    n_agents: usize,
    obs_dim: usize,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

impl TeamPolicy {
    pub fn new(n_agents: usize, obs_dim: usize, n_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![ObservationSet::input_dim(obs_dim, n_agents)];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        Ok(Self {
            net: DenseNetwork::new(&sizes, seed)?,
            n_agents,
            obs_dim,
        })
    }

    pub fn from_network(net: DenseNetwork, n_agents: usize, obs_dim: usize) -> Result<Self> {
        check_len("team network input", ObservationSet::input_dim(obs_dim, n_agents), net.input_dim())?;
        Ok(Self { net, n_agents, obs_dim })
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(input)
    }

    /// Greedy action; ties go to the lowest action index.
    pub fn greedy(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.net.forward(input)?))
    }

    pub fn inputs(&self, set: &ObservationSet) -> Vec<Vec<f64>> {
        (0..self.n_agents).map(|i| set.policy_input(i)).collect()
    }

    /// Epsilon-greedy joint action. Inactive agents take action 0 without
    /// consulting the network.
    pub fn act(&self, set: &ObservationSet, active: &[bool], epsilon: f64, rng: &mut Rng64) -> Result<Vec<usize>> {
        check_len("team agents", self.n_agents, set.n_agents())?;
        let mut input = vec![0.0; self.input_dim()];
        let mut cache = ForwardCache::default();
        let mut actions = Vec::with_capacity(self.n_agents);
        for (i, &on) in active.iter().enumerate() {
            if !on {
                actions.push(0);
                continue;
            }
            if epsilon > 0.0 && bernoulli(rng, epsilon) {
                actions.push(index(rng, self.n_actions()));
                continue;
            }
            set.write_policy_input(i, &mut input);
            actions.push(argmax(self.net.forward_cached(&input, &mut cache)?));
        }
        Ok(actions)
    }
}

/// One team transition; policy inputs are stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamTransition {
    pub inputs: Vec<f32>,
    pub actions: Vec<u8>,
    pub active: Vec<bool>,
    pub reward: f64,
    pub next_inputs: Vec<f32>,
    pub next_active: Vec<bool>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between gradient steps.
    pub train_every: usize,
    pub target_period: u64,
    pub grad_clip: Option<f64>,
    /// Weight of the potential-difference term added to team-learning
    /// targets.
    pub shaping: f64,
    pub comm_cost: f64,
    pub cp_hidden: Vec<usize>,
    pub cp_learning_rate: f64,
    pub cp_gamma: f64,
    pub cp_entropy: f64,
    /// Episodes per communication-policy update.
    pub cp_batch_episodes: usize,
    /// Fraction of the run before the communication policy starts training.
    pub cp_warmup: f64,
}

impl Default for TeamConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 5e-4,
            gamma: 0.95,
            epsilon: EpsilonSchedule::default(),
            buffer_capacity: 10_000,
            batch_size: 32,
            train_every: 1,
            target_period: 200,
            grad_clip: Some(10.0),
            shaping: 1.0,
            comm_cost: 0.005,
            cp_hidden: vec![64, 64],
            cp_learning_rate: 5e-4,
            cp_gamma: 0.95,
            cp_entropy: 0.0,
            cp_batch_episodes: 8,
            cp_warmup: 0.3,
        }
    }
}

impl TeamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..1.0).contains(&self.cp_gamma) {
            return Err(Error::InvalidConfig("discount factors must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.train_every == 0 || self.cp_batch_episodes == 0 {
            return Err(Error::InvalidConfig("batch, buffer and period sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.cp_learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.comm_cost < 0.0 {
            return Err(Error::InvalidConfig("comm_cost must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gate regime while training the team.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommMode {
    /// Gates come from the communication policy, which trains alongside.
    Learned,
    Always,
    /// No messages at all (ablation).
    Never,
}

/// Value-decomposition learner for a team policy.
#[derive(Debug, Clone)]
pub struct VdnTrainer {
    target: TargetCopy,
    optimizer: OptimizerState,
    buffer: ReplayBuffer<TeamTransition>,
    replay_rng: Rng64,
    gamma: f64,
    batch_size: usize,
    target_period: u64,
    caches: Vec<ForwardCache>,
}

impl VdnTrainer {
    pub fn new(team: &TeamPolicy, cfg: &TeamConfig, seed: u64) -> Self {
        let mut optimizer = OptimizerState::for_network(OptimizerKind::adam(), cfg.learning_rate, team.network());
        if let Some(c) = cfg.grad_clip {
            optimizer = optimizer.with_clip(c);
        }
        Self {
            target: TargetCopy::new(team.network()),
            optimizer,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            replay_rng: stream_rng(seed, stream::REPLAY),
            gamma: cfg.gamma,
            batch_size: cfg.batch_size,
            target_period: cfg.target_period,
            caches: Vec::new(),
        }
    }

    pub fn push(&mut self, t: TeamTransition) {
        self.buffer.push(t);
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// One gradient step on a sampled batch; returns the mean squared TD
    /// error, or `None` while the buffer holds less than one batch.
    pub fn update(&mut self, team: &mut TeamPolicy) -> Result<Option<f64>> {
        if self.buffer.len() < self.batch_size {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(self.batch_size, &mut self.replay_rng);
        let net = &team.net;
        let dim = net.input_dim();
        let n = team.n_agents;
        if self.caches.len() < n {
            self.caches.resize_with(n, ForwardCache::default);
        }
        let mut grads = Gradients::zeros_like(net);
        let mut loss = 0.0;
        let scale = 2.0 / self.batch_size as f64;
        let mut x = vec![0.0; dim];
        for &k in &idx {
            let tr = self.buffer.get(k);
            let mut bootstrap = 0.0;
            if !tr.terminal {
                for i in (0..n).filter(|&i| tr.next_active[i]) {
                    for (xv, &s) in x.iter_mut().zip(&tr.next_inputs[i * dim..(i + 1) * dim]) {
                        *xv = s as f64;
                    }
                    let q = self.target.forward(&x)?;
                    bootstrap += q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                }
            }
            let y = tr.reward + self.gamma * bootstrap;
            let mut q_sum = 0.0;
            for i in (0..n).filter(|&i| tr.active[i]) {
                for (xv, &s) in x.iter_mut().zip(&tr.inputs[i * dim..(i + 1) * dim]) {
                    *xv = s as f64;
                }
                q_sum += net.forward_cached(&x, &mut self.caches[i])?[tr.actions[i] as usize];
            }
            let delta = q_sum - y;
            loss += delta * delta;
            let mut out = vec![0.0; net.output_dim()];
            for i in (0..n).filter(|&i| tr.active[i]) {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[tr.actions[i] as usize] = scale * delta;
                net.backward_cached(&self.caches[i], &out, &mut grads, None)?;
            }
        }
        loss /= self.batch_size as f64;
        if !loss.is_finite() || grads.ensure_finite().is_err() {
            return Err(Error::Divergence {
                stage: "team value decomposition",
                detail: alloc::format!("loss {loss}"),
            });
        }
        apply_update(&mut team.net, &mut self.optimizer, &grads)?;
        self.target.tick();
        self.target.sync_if_due(&team.net, self.target_period);
        Ok(Some(loss))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeamCurvePoint {
    pub episode: usize,
    pub team_return: f64,
    pub win: bool,
    pub loss: f64,
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamOutcome {
    pub team: TeamPolicy,
    pub cp: CommPolicy,
    pub curve: Vec<TeamCurvePoint>,
}

pub fn gate_mode(comm: CommMode) -> GateMode {
    match comm {
        CommMode::Learned => GateMode::Sampled,
        CommMode::Always => GateMode::Always,
        CommMode::Never => GateMode::Never,
    }
}

/// Team reward plus `shaping * (gamma * phi(s') - phi(s))`.
pub fn shaped_reward<E: Environment>(env: &E, cfg: &TeamConfig, state: &E::State, out: &StepOutcome<E::State>) -> f64 {
    if cfg.shaping == 0.0 {
        return out.team_reward;
    }
    out.team_reward + cfg.shaping * (cfg.gamma * env.potential(&out.state) - env.potential(state))
}

/// Fresh team and communication policy for `env`, seeded from `seed`.
pub fn init_team<E: Environment>(env: &E, cfg: &TeamConfig, seed: u64) -> Result<(TeamPolicy, CommPolicy)> {
    let team = TeamPolicy::new(env.n_agents(), env.obs_dim(), env.n_actions(), &cfg.hidden, seed)?;
    let cp = CommPolicy::new(env.n_agents(), env.obs_dim(), &cfg.cp_hidden, seed ^ 0x5EED_C0DE)?;
    Ok((team, cp))
}

/// Jointly trains the team policy (value decomposition) and, in
/// [`CommMode::Learned`], the communication policy (policy gradient).
pub fn train_team<E: Environment>(
    env: &E,
    cfg: &TeamConfig,
    comm: CommMode,
    episodes: usize,
    seed: u64,
) -> Result<TeamOutcome> {
    cfg.validate()?;
    let (mut team, mut cp) = init_team(env, cfg, seed)?;
    let mut vdn = VdnTrainer::new(&team, cfg, seed);
    let mut cp_opt = OptimizerState::for_network(OptimizerKind::adam(), cfg.cp_learning_rate, cp.network());
    let mut explore = stream_rng(seed, stream::EXPLORE);
    let mut gates = stream_rng(seed, stream::GATES);
    let mode = gate_mode(comm);
    let n = env.n_agents();
    let cp_start = (cfg.cp_warmup * episodes as f64) as usize;
    let mut batch: Vec<CpEpisode> = Vec::new();
    let mut curve = Vec::with_capacity(episodes);
    let mut steps = 0usize;

    for ep in 0..episodes {
        let eps = cfg.epsilon.value(ep, episodes);
        let mut state = env.reset(episode_seed(seed, ep));
        let mut record = CpEpisode::default();
        let mut ret = 0.0;
        let mut losses = (0.0, 0usize);
        let mut messages = 0;
        let mut current = communicate(env, &state, &cp, mode, &mut gates)?;
        let win = loop {
            let active = env.active(&state);
            let actions = team.act(&current.messages, &active, eps, &mut explore)?;
            let out = env.step(&state, &actions)?;
            ret += out.team_reward;
            messages += current.decision.count();
            let inputs: Vec<f64> = team.inputs(&current.messages).concat();
            let terminal = out.is_terminal();
            let next = if terminal {
                None
            } else {
                Some(communicate(env, &out.state, &cp, mode, &mut gates)?)
            };
            let next_inputs = next
                .as_ref()
                .map(|c| pack(&team.inputs(&c.messages).concat()))
                .unwrap_or_default();
            vdn.push(TeamTransition {
                inputs: pack(&inputs),
                actions: actions.iter().map(|&a| a as u8).collect(),
                active,
                reward: shaped_reward(env, cfg, &state, &out),
                next_inputs,
                next_active: env.active(&out.state),
                terminal,
            });
            if comm == CommMode::Learned {
                record.steps.push(CpStep {
                    features: current.gate_features.clone(),
                    gates: current.decision.clone(),
                    masked: ChannelBits::zeros(n),
                    reward: out.team_reward,
                });
            }
            steps += 1;
            if steps % cfg.train_every == 0 {
                if let Some(l) = vdn.update(&mut team)? {
                    losses.0 += l;
                    losses.1 += 1;
                }
            }
            state = out.state;
            match next {
                Some(c) => current = c,
                None => break out.win.unwrap_or(false),
            }
        };
        if comm == CommMode::Learned && ep >= cp_start {
            batch.push(record);
            if batch.len() == cfg.cp_batch_episodes {
                train_cp_step(&mut cp, &mut cp_opt, &batch, cfg.comm_cost, cfg.cp_gamma, cfg.cp_entropy)?;
                batch.clear();
            }
        }
        curve.push(TeamCurvePoint {
            episode: ep,
            team_return: ret,
            win,
            loss: if losses.1 > 0 { losses.0 / losses.1 as f64 } else { 0.0 },
            messages,
        });
    }
    Ok(TeamOutcome { team, cp, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{RelayConfig, RelayTask};

    fn small_cfg() -> TeamConfig {
        TeamConfig {
            hidden: vec![16],
            cp_hidden: vec![8],
            batch_size: 8,
            ..Default::default()
        }
    }

    fn relay2() -> RelayTask {
        RelayTask::new(RelayConfig {
            n_agents: 2,
            fixed_roles: true,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_episodes_return_initial_networks() {
        let env = relay2();
        let cfg = small_cfg();
        let out = train_team(&env, &cfg, CommMode::Learned, 0, 4).unwrap();
        let (team, cp) = init_team(&env, &cfg, 4).unwrap();
        assert_eq!(out.team, team);
        assert_eq!(out.cp, cp);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn seeded_runs_replay() {
        let env = relay2();
        let cfg = small_cfg();
        let a = train_team(&env, &cfg, CommMode::Learned, 30, 2).unwrap();
        let b = train_team(&env, &cfg, CommMode::Learned, 30, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.curve.len(), 30);
    }

    #[test]
    fn inactive_agents_take_default_action() {
        let env = relay2();
        let (team, _) = init_team(&env, &small_cfg(), 0).unwrap();
        let set = ObservationSet::silent(vec![vec![0.0; 8]; 2]);
        let mut rng = stream_rng(0, stream::EXPLORE);
        assert_eq!(team.act(&set, &[false, false], 1.0, &mut rng).unwrap(), vec![0, 0]);
    }
}
