//! The channel-masking adversary.
//!
//! Every channel `(i, j)` is a masking agent. A single shared network maps
//! `[h_i, h_j]` to Q values for keep (0) and mask (1). A mixing critic
//! combines the chosen-action Q values with non-negative weights plus a bias,
//! so the joint greedy action is the per-channel greedy action. The reward is
//! the reciprocal `1 / (w1 * shifted_team_reward + w2 * masks + xi)`: the
//! adversary gains by hurting the team with few masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{apply_mask, n_channels, ChannelBits, ChannelId, CommPolicy, GateMode, MaskMatrix};
use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::graph::{state_features, GraphConfig};
use crate::nn::{apply_update, DenseNetwork, ForwardCache, Gradients, OptimizerKind, OptimizerState, TargetCopy};
use crate::replay::{pack, ReplayBuffer};
use crate::rng::{bernoulli, index, stream, stream_rng, Rng64};
use crate::rollout::{communicate, episode_seed, EpsilonSchedule};
use crate::team::TeamPolicy;

pub const KEEP: usize = 0;
pub const MASK: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    /// Learned non-negative weights and bias.
    Linear,
    /// Unit weights, zero bias, nothing learned.
    Vdn,
}

/// How many channels a deployed masker may close per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Always mask this many channels: the highest mask-minus-keep values.
    Exactly(usize),
    /// Mask up to this many channels among those the policy prefers to mask.
    AtMost(usize),
    /// Per-channel greedy choice.
    Unlimited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryConfig {
    pub w1: f64,
    pub w2: f64,
    pub xi: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub target_period: u64,
    /// Environment steps between gradient steps.
    pub train_every: usize,
    pub grad_clip: Option<f64>,
    pub mixer: MixerKind,
    pub graph: GraphConfig,
    pub budget: Budget,
    /// Explore and bootstrap under `budget` instead of per channel.
    pub budgeted_training: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.1,
            xi: 0.001,
            gamma: 0.95,
            epsilon: EpsilonSchedule::default(),
            buffer_capacity: 50_000,
            batch_size: 64,
            learning_rate: 5e-4,
            hidden: vec![64, 64],
            target_period: 200,
            train_every: 1,
            grad_clip: Some(10.0),
            mixer: MixerKind::Linear,
            graph: GraphConfig::default(),
            budget: Budget::Exactly(1),
            budgeted_training: true,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) {
            return Err(Error::InvalidConfig("xi must be positive".into()));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 || !(self.w1 + self.w2 > 0.0) {
            return Err(Error::InvalidConfig("w1 and w2 must be non-negative with a positive sum".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.train_every == 0 {
            return Err(Error::InvalidConfig("batch, buffer and period sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// The budget training explores and bootstraps under.
    pub fn training_budget(&self) -> Budget {
        if self.budgeted_training {
            self.budget
        } else {
            Budget::Unlimited
        }
    }
}

/// Shared per-channel Q network over `[h_i, h_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingPolicy {
    net: DenseNetwork,
    n_agents: usize,
    feature_dim: usize,
}

impl MaskingPolicy {
    pub fn new(n_agents: usize, feature_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * feature_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        Ok(Self {
            net: DenseNetwork::new(&sizes, seed)?,
            n_agents,
            feature_dim,
        })
    }

    pub fn from_network(net: DenseNetwork, n_agents: usize) -> Result<Self> {
        check_len("masking network output", 2, net.output_dim())?;
        let feature_dim = net.input_dim() / 2;
        Ok(Self {
            net,
            n_agents,
            feature_dim,
        })
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

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        check_len("adversary agents", self.n_agents, features.len())?;
        for h in features {
            check_len("adversary features", self.feature_dim, h.len())?;
        }
        Ok(())
    }

    /// `[Q(keep), Q(mask)]` of every channel, in channel order.
    pub fn q_values(&self, features: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
        self.check_features(features)?;
        q_table(&self.net, features)
    }
}

fn q_table(net: &DenseNetwork, features: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = features.len();
    let mut cache = ForwardCache::default();
    let mut buf = Vec::with_capacity(net.input_dim());
    let mut out = Vec::with_capacity(n_channels(n));
    for i in 0..n {
        for j in i + 1..n {
            buf.clear();
            buf.extend_from_slice(&features[i]);
            buf.extend_from_slice(&features[j]);
            let q = net.forward_cached(&buf, &mut cache)?;
            out.push([q[0], q[1]]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectMode {
    Greedy,
    /// Per-channel epsilon-greedy.
    Explore(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSelection {
    pub mask: MaskMatrix,
    pub q: Vec<[f64; 2]>,
    /// Q value of the chosen action on every channel.
    pub chosen: Vec<f64>,
}

/// Greedy choice for one channel; a tie keeps the channel open.
pub fn greedy_action(q: [f64; 2]) -> usize {
    if q[MASK] > q[KEEP] {
        MASK
    } else {
        KEEP
    }
}

pub fn select_masks(
    policy: &MaskingPolicy,
    features: &[Vec<f64>],
    mode: SelectMode,
    rng: &mut Rng64,
) -> Result<MaskSelection> {
    let q = policy.q_values(features)?;
    let mut bits = Vec::with_capacity(q.len());
    let mut chosen = Vec::with_capacity(q.len());
    for qc in &q {
        let a = match mode {
            SelectMode::Greedy => greedy_action(*qc),
            SelectMode::Explore(eps) => {
                if eps > 0.0 && bernoulli(rng, eps) {
                    bernoulli(rng, 0.5) as usize
                } else {
                    greedy_action(*qc)
                }
            }
        };
        bits.push(a == MASK);
        chosen.push(qc[a]);
    }
    Ok(MaskSelection {
        mask: ChannelBits::from_bits(policy.n_agents, bits)?,
        q,
        chosen,
    })
}

/// Epsilon-greedy under a budget. With probability `eps` the whole mask is
/// redrawn: `Exactly(k)` picks k distinct channels uniformly, `AtMost(k)`
/// first draws how many in `0..=k`. `Unlimited` explores channel by channel.
pub fn select_budgeted(
    policy: &MaskingPolicy,
    features: &[Vec<f64>],
    budget: Budget,
    eps: f64,
    rng: &mut Rng64,
) -> Result<MaskSelection> {
    if budget == Budget::Unlimited {
        return select_masks(policy, features, SelectMode::Explore(eps), rng);
    }
    let q = policy.q_values(features)?;
    let n = policy.n_agents;
    let c_count = q.len();
    let mask = if eps > 0.0 && bernoulli(rng, eps) {
        let k = match budget {
            Budget::Exactly(k) => k.min(c_count),
            Budget::AtMost(k) => index(rng, k.min(c_count) + 1),
            Budget::Unlimited => unreachable!(),
        };
        let mut order: Vec<usize> = (0..c_count).collect();
        for m in 0..k {
            let j = m + index(rng, c_count - m);
            order.swap(m, j);
        }
        let mut mask = ChannelBits::zeros(n);
        for &c in &order[..k] {
            mask.set_index(c, true);
        }
        mask
    } else {
        budgeted_mask(n, &q, budget)?
    };
    let chosen = q.iter().zip(mask.bits()).map(|(qc, &b)| qc[b as usize]).collect();
    Ok(MaskSelection { mask, q, chosen })
}

/// Deployed mask under a budget. Channels are ranked by `Q(mask) - Q(keep)`,
/// ties broken toward the lower channel index.
pub fn budgeted_mask(n: usize, q: &[[f64; 2]], budget: Budget) -> Result<MaskMatrix> {
    check_len("channel Q values", n_channels(n), q.len())?;
    let mut order: Vec<usize> = (0..q.len()).collect();
    let adv = |k: usize| q[k][MASK] - q[k][KEEP];
    order.sort_by(|&a, &b| adv(b).partial_cmp(&adv(a)).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut mask = ChannelBits::zeros(n);
    match budget {
        Budget::Unlimited => {
            for (k, qc) in q.iter().enumerate() {
                mask.set_index(k, greedy_action(*qc) == MASK);
            }
        }
        Budget::Exactly(b) => {
            for &k in order.iter().take(b) {
                mask.set_index(k, true);
            }
        }
        Budget::AtMost(b) => {
            for &k in order.iter().take(b).filter(|&&k| greedy_action(q[k]) == MASK) {
                mask.set_index(k, true);
            }
        }
    }
    Ok(mask)
}

/// Number of masked channels.
pub fn count_masks(mask: &MaskMatrix) -> usize {
    mask.count()
}

/// `1 / (w1 * shifted + w2 * masks + xi)` for a non-negative shifted team
/// reward.
pub fn adversary_reward(shifted: f64, masks: usize, cfg: &AdversaryConfig) -> Result<f64> {
    if shifted < 0.0 || !shifted.is_finite() {
        return Err(Error::NegativeShiftedReward(shifted));
    }
    Ok(1.0 / (cfg.w1 * shifted + cfg.w2 * masks as f64 + cfg.xi))
}

/// Team reward shifted by the environment's per-step floor. Rounding noise
/// just below zero is clamped; anything further below is an error.
pub fn shift_reward<E: Environment>(env: &E, reward: f64) -> Result<f64> {
    let shifted = reward - env.reward_floor();
    if shifted < 0.0 && shifted > -1e-9 {
        Ok(0.0)
    } else if shifted < 0.0 {
        Err(Error::NegativeShiftedReward(shifted))
    } else {
        Ok(shifted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingCritic {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub kind: MixerKind,
}

impl MixingCritic {
    pub fn new(channels: usize, kind: MixerKind) -> Self {
        let w = match kind {
            MixerKind::Linear => 1.0 / channels.max(1) as f64,
            MixerKind::Vdn => 1.0,
        };
        Self {
            weights: vec![w; channels],
            bias: 0.0,
            kind,
        }
    }

    pub fn mix(&self, chosen: &[f64]) -> Result<f64> {
        check_len("chosen Q values", self.weights.len(), chosen.len())?;
        Ok(self.weights.iter().zip(chosen).map(|(w, q)| w * q).sum::<f64>() + self.bias)
    }

    /// Clamps every weight to be non-negative.
    pub fn project(&mut self) {
        for w in self.weights.iter_mut() {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
    }

    /// Flat parameters: weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryTransition {
    /// `n * feature_dim` features, agent-major.
    pub features: Vec<f32>,
    pub mask: Vec<bool>,
    pub reward: f64,
    pub next_features: Vec<f32>,
    pub terminal: bool,
}

fn unpack_features(flat: &[f32], n: usize) -> Vec<Vec<f64>> {
    let d = flat.len() / n.max(1);
    flat.chunks_exact(d.max(1)).map(|c| c.iter().map(|&v| v as f64).collect()).collect()
}

/// Gradients of the squared TD loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TdGradients {
    pub loss: f64,
    pub policy: Gradients,
    /// Mixer weights then bias; zero for a fixed mixer.
    pub mixer: Vec<f64>,
}

/// Mean of `(Q_tot - y)^2` over `batch` with
/// `y = r + gamma * (1 - terminal) * Q~_tot(h', a')`, where `a'` is the
/// target network's budgeted greedy mask. Under `Unlimited` that is the
/// channel-by-channel max.
#[allow(clippy::too_many_arguments)]
pub fn td_gradients(
    policy: &MaskingPolicy,
    critic: &MixingCritic,
    target_net: &DenseNetwork,
    target_critic: &MixingCritic,
    batch: &[&AdversaryTransition],
    gamma: f64,
    budget: Budget,
) -> Result<TdGradients> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = policy.n_agents;
    let c_count = n_channels(n);
    let net = &policy.net;
    let mut grads = Gradients::zeros_like(net);
    let mut mixer = vec![0.0; c_count + 1];
    let mut caches: Vec<ForwardCache> = (0..c_count).map(|_| ForwardCache::default()).collect();
    let mut loss = 0.0;
    let scale = 2.0 / batch.len() as f64;
    let mut buf = Vec::with_capacity(net.input_dim());
    for tr in batch {
        check_len("transition mask", c_count, tr.mask.len())?;
        let h = unpack_features(&tr.features, n);
        let mut y = tr.reward;
        if !tr.terminal {
            let h_next = unpack_features(&tr.next_features, n);
            let q_next = q_table(target_net, &h_next)?;
            let a_next = budgeted_mask(n, &q_next, budget)?;
            let best: Vec<f64> = q_next.iter().zip(a_next.bits()).map(|(q, &b)| q[b as usize]).collect();
            y += gamma * target_critic.mix(&best)?;
        }
        let mut chosen = vec![0.0; c_count];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                buf.clear();
                buf.extend_from_slice(&h[i]);
                buf.extend_from_slice(&h[j]);
                let q = net.forward_cached(&buf, &mut caches[k])?;
                chosen[k] = q[tr.mask[k] as usize];
                k += 1;
            }
        }
        let q_tot = critic.mix(&chosen)?;
        let delta = q_tot - y;
        loss += delta * delta;
        let g = scale * delta;
        for (c, cache) in caches.iter().enumerate() {
            let mut out = [0.0; 2];
            out[tr.mask[c] as usize] = g * critic.weights[c];
            if out[0] != 0.0 || out[1] != 0.0 {
                net.backward_cached(cache, &out, &mut grads, None)?;
            }
            if critic.kind == MixerKind::Linear {
                mixer[c] += g * chosen[c];
            }
        }
        if critic.kind == MixerKind::Linear {
            mixer[c_count] += g;
        }
    }
    Ok(TdGradients {
        loss: loss / batch.len() as f64,
        policy: grads,
        mixer,
    })
}

/// Replay, optimizers and target copies of one adversary training run.
#[derive(Debug, Clone)]
pub struct TdLearner {
    target: TargetCopy,
    target_critic: MixingCritic,
    policy_opt: OptimizerState,
    mixer_opt: OptimizerState,
    buffer: ReplayBuffer<AdversaryTransition>,
    replay_rng: Rng64,
    gamma: f64,
    batch_size: usize,
    target_period: u64,
    budget: Budget,
}

impl TdLearner {
    pub fn new(policy: &MaskingPolicy, critic: &MixingCritic, cfg: &AdversaryConfig, seed: u64) -> Self {
        let mut policy_opt = OptimizerState::for_network(OptimizerKind::adam(), cfg.learning_rate, &policy.net);
        let mut mixer_opt = OptimizerState::new(OptimizerKind::adam(), cfg.learning_rate, critic.weights.len() + 1);
        if let Some(c) = cfg.grad_clip {
            policy_opt = policy_opt.with_clip(c);
            mixer_opt = mixer_opt.with_clip(c);
        }
        Self {
            target: TargetCopy::new(&policy.net),
            target_critic: critic.clone(),
            policy_opt,
            mixer_opt,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            replay_rng: stream_rng(seed, stream::REPLAY),
            gamma: cfg.gamma,
            batch_size: cfg.batch_size,
            target_period: cfg.target_period,
            budget: cfg.training_budget(),
        }
    }

    pub fn push(&mut self, t: AdversaryTransition) {
        self.buffer.push(t);
    }

    /// One TD step on a sampled batch; `None` until a batch is available.
    pub fn update(&mut self, policy: &mut MaskingPolicy, critic: &mut MixingCritic) -> Result<Option<f64>> {
        if self.buffer.len() < self.batch_size {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(self.batch_size, &mut self.replay_rng);
        let batch: Vec<&AdversaryTransition> = idx.iter().map(|&k| self.buffer.get(k)).collect();
        td_update(
            policy,
            critic,
            self.target.network(),
            &self.target_critic,
            &batch,
            self.gamma,
            self.budget,
            &mut self.policy_opt,
            &mut self.mixer_opt,
        )
        .map(|loss| {
            self.target.tick();
            if self.target.sync_if_due(&policy.net, self.target_period) {
                self.target_critic = critic.clone();
            }
            Some(loss)
        })
    }
}

/// Gradient step on the TD loss followed by the non-negativity projection.
#[allow(clippy::too_many_arguments)]
pub fn td_update(
    policy: &mut MaskingPolicy,
    critic: &mut MixingCritic,
    target_net: &DenseNetwork,
    target_critic: &MixingCritic,
    batch: &[&AdversaryTransition],
    gamma: f64,
    budget: Budget,
    policy_opt: &mut OptimizerState,
    mixer_opt: &mut OptimizerState,
) -> Result<f64> {
    let g = td_gradients(policy, critic, target_net, target_critic, batch, gamma, budget)?;
    if !g.loss.is_finite() || g.policy.ensure_finite().is_err() || g.mixer.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            stage: "adversary TD update",
            detail: alloc::format!("loss {}", g.loss),
        });
    }
    apply_update(&mut policy.net, policy_opt, &g.policy)?;
    if critic.kind == MixerKind::Linear {
        let mut params = critic.params();
        mixer_opt.apply(&mut params, &g.mixer)?;
        let c = critic.weights.len();
        critic.weights.copy_from_slice(&params[..c]);
        critic.bias = params[c];
        critic.project();
    }
    debug_assert!(critic.is_monotone());
    Ok(g.loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryCurvePoint {
    pub episode: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub mean_masks: f64,
    pub win: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryOutcome {
    pub policy: MaskingPolicy,
    pub critic: MixingCritic,
    pub curve: Vec<AdversaryCurvePoint>,
}

pub fn init_adversary<E: Environment>(env: &E, cfg: &AdversaryConfig, seed: u64) -> Result<(MaskingPolicy, MixingCritic)> {
    let fd = env.obs_dim() + cfg.graph.embedding_dim;
    let policy = MaskingPolicy::new(env.n_agents(), fd, &cfg.hidden, seed ^ 0xAD7E_55A2)?;
    let critic = MixingCritic::new(n_channels(env.n_agents()), cfg.mixer);
    Ok((policy, critic))
}

/// Trains a fresh adversary against the frozen team and gate policy.
pub fn train_adversary<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    cfg: &AdversaryConfig,
    episodes: usize,
    seed: u64,
) -> Result<AdversaryOutcome> {
    let (policy, critic) = init_adversary(env, cfg, seed)?;
    continue_adversary(env, team, cp, cfg, policy, critic, episodes, seed)
}

/// Runs the adversary training loop starting from given networks.
#[allow(clippy::too_many_arguments)]
pub fn continue_adversary<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    cfg: &AdversaryConfig,
    mut policy: MaskingPolicy,
    mut critic: MixingCritic,
    episodes: usize,
    seed: u64,
) -> Result<AdversaryOutcome> {
    cfg.validate()?;
    let mut learner = TdLearner::new(&policy, &critic, cfg, seed);
    let mut explore = stream_rng(seed, stream::ADVERSARY);
    let mut gates = stream_rng(seed, stream::GATES);
    let mut team_rng = stream_rng(seed, stream::EXPLORE);
    let mut curve = Vec::with_capacity(episodes);
    let mut steps = 0usize;
    for ep in 0..episodes {
        let eps = cfg.epsilon.value(ep, episodes);
        let mut state = env.reset(episode_seed(seed, ep));
        let mut h = state_features(env, &state, &cfg.graph)?;
        let (mut r_sum, mut m_sum, mut l_sum, mut l_n, mut t) = (0.0, 0usize, 0.0, 0usize, 0usize);
        let win = loop {
            let sel = select_budgeted(&policy, &h, cfg.training_budget(), eps, &mut explore)?;
            let masks = count_masks(&sel.mask);
            let comm = communicate(env, &state, cp, GateMode::Sampled, &mut gates)?;
            let delivered = apply_mask(&comm.messages, &sel.mask)?;
            let actions = team.act(&delivered, &env.active(&state), 0.0, &mut team_rng)?;
            let out = env.step(&state, &actions)?;
            let r_hat = adversary_reward(shift_reward(env, out.team_reward)?, masks, cfg)?;
            let terminal = out.is_terminal();
            let h_next = if terminal {
                Vec::new()
            } else {
                state_features(env, &out.state, &cfg.graph)?
            };
            learner.push(AdversaryTransition {
                features: pack(&h.concat()),
                mask: sel.mask.bits().to_vec(),
                reward: r_hat,
                next_features: pack(&h_next.concat()),
                terminal,
            });
            r_sum += r_hat;
            m_sum += masks;
            t += 1;
            steps += 1;
            if steps % cfg.train_every == 0 {
                if let Some(l) = learner.update(&mut policy, &mut critic)? {
                    l_sum += l;
                    l_n += 1;
                }
            }
            if terminal {
                break out.win.unwrap_or(false);
            }
            state = out.state;
            h = h_next;
        };
        curve.push(AdversaryCurvePoint {
            episode: ep,
            mean_reward: r_sum / t as f64,
            loss: if l_n > 0 { l_sum / l_n as f64 } else { 0.0 },
            mean_masks: m_sum as f64 / t as f64,
            win,
        });
    }
    Ok(AdversaryOutcome { policy, critic, curve })
}

/// A trained adversary deployed with a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployedAdversary {
    pub policy: MaskingPolicy,
    pub graph: GraphConfig,
    pub budget: Budget,
}

impl DeployedAdversary {
    pub fn mask<E: Environment>(&self, env: &E, state: &E::State) -> Result<MaskMatrix> {
        let h = state_features(env, state, &self.graph)?;
        budgeted_mask(env.n_agents(), &self.policy.q_values(&h)?, self.budget)
    }

    /// The channel the adversary would mask first in `state`.
    pub fn top_channel<E: Environment>(&self, env: &E, state: &E::State) -> Result<ChannelId> {
        let h = state_features(env, state, &self.graph)?;
        let m = budgeted_mask(env.n_agents(), &self.policy.q_values(&h)?, Budget::Exactly(1))?;
        let top = m.active().next().expect("at least one channel");
        Ok(top)
    }
}
