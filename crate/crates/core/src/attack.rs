//! Evaluation-time attacks and masking baselines.
//!
//! Message attacks rewrite the content of open channels and leave null
//! slots alone; maskers produce a mask matrix and leave content alone.

use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{
    apply_mask, channels, n_channels, ChannelBits, ChannelId, CommPolicy, GateMode, MaskMatrix, MessageSlot,
    ObservationSet, MESSAGE_DIM, SLOT_WIDTH,
};
use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::graph::{state_features, AgentGraph, GraphConfig};
use crate::nn::{apply_update, DenseNetwork, ForwardCache, Gradients, OptimizerKind, OptimizerState, TargetCopy};
use crate::replay::{pack, ReplayBuffer};
use crate::rng::{bernoulli, derive_seed, index, stream, stream_rng, uniform, Rng64};
use crate::rollout::{communicate, episode_seed, EpsilonSchedule};
use crate::team::TeamPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackBudget {
    /// Channels attacked per step.
    pub channels: usize,
    /// Learned-attack codebook size.
    pub codebook_size: usize,
}

impl Default for AttackBudget {
    fn default() -> Self {
        Self {
            channels: 1,
            codebook_size: 16,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if self.channels == 0 || self.channels > n_channels(n_agents) {
            return Err(Error::InvalidConfig("attack budget must lie in 1..=channel count".into()));
        }
        if self.codebook_size == 0 {
            return Err(Error::InvalidConfig("codebook size must be positive".into()));
        }
        Ok(())
    }
}

/// Channels whose slots carry content at both endpoints.
pub fn open_channels(set: &ObservationSet) -> Vec<ChannelId> {
    channels(set.n_agents())
        .filter(|c| !set.slot(c.i, c.j).masked() && !set.slot(c.j, c.i).masked())
        .collect()
}

/// Draws `k` distinct items of `pool` uniformly (partial Fisher-Yates).
fn choose_distinct<T: Copy>(pool: &[T], k: usize, rng: &mut Rng64) -> Vec<T> {
    let mut items = pool.to_vec();
    let k = k.min(items.len());
    for s in 0..k {
        let j = s + index(rng, items.len() - s);
        items.swap(s, j);
    }
    items.truncate(k);
    items
}

fn write_channel(set: &mut ObservationSet, c: ChannelId, to_i: [f64; MESSAGE_DIM], to_j: [f64; MESSAGE_DIM]) {
    set.set_slot(c.i, c.j, MessageSlot::filled(to_i));
    set.set_slot(c.j, c.i, MessageSlot::filled(to_j));
}

/// Replaces both endpoints' content on `budget.channels` random open
/// channels with uniform noise in `[-1, 1]`.
pub fn heuristic_attack(set: &ObservationSet, budget: &AttackBudget, rng: &mut Rng64) -> ObservationSet {
    let mut out = set.clone();
    for c in choose_distinct(&open_channels(set), budget.channels, rng) {
        let mut a = [0.0; MESSAGE_DIM];
        let mut b = [0.0; MESSAGE_DIM];
        a.iter_mut().chain(b.iter_mut()).for_each(|v| *v = uniform(rng, -1.0, 1.0));
        write_channel(&mut out, c, a, b);
    }
    out
}

/// Masks one channel chosen uniformly.
pub fn random_masker(n: usize, rng: &mut Rng64) -> MaskMatrix {
    let mut m = ChannelBits::zeros(n);
    if n >= 2 {
        m.set_index(index(rng, n_channels(n)), true);
    }
    m
}

/// Masks the channel between the best-rewarded agent (lowest index on ties)
/// and a uniformly chosen graph neighbor; an isolated top agent falls back to
/// [`random_masker`].
pub fn reward_based_masker(rewards: &[f64], graph: &AgentGraph, rng: &mut Rng64) -> Result<MaskMatrix> {
    let n = graph.n_vertices();
    check_len("agent rewards", n, rewards.len())?;
    let mut top = 0;
    for (i, &r) in rewards.iter().enumerate() {
        if r > rewards[top] {
            top = i;
        }
    }
    let neighbors: Vec<usize> = graph.neighbors(top).map(|(u, _)| u).collect();
    if neighbors.is_empty() {
        return Ok(random_masker(n, rng));
    }
    let other = neighbors[index(rng, neighbors.len())];
    Ok(ChannelBits::from_channels(n, [ChannelId::new(top, other)?]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub budget: AttackBudget,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub train_every: usize,
    pub target_period: u64,
    pub grad_clip: Option<f64>,
    pub graph: GraphConfig,
    /// Clean episodes sampled to fit the codebook.
    pub codebook_episodes: usize,
    /// Sign-gradient iterations on each codebook vector.
    pub codebook_iterations: usize,
    pub codebook_step: f64,
    /// Cap on receiver samples kept for codebook fitting.
    pub codebook_samples: usize,
    /// Independently seeded attackers trained by [`train_strongest_attack`].
    pub restarts: usize,
    /// Held-out episodes used to pick the strongest restart.
    pub selection_episodes: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: AttackBudget::default(),
            hidden: vec![64, 64],
            learning_rate: 5e-4,
            gamma: 0.95,
            epsilon: EpsilonSchedule::default(),
            buffer_capacity: 50_000,
            batch_size: 64,
            train_every: 1,
            target_period: 200,
            grad_clip: Some(10.0),
            graph: GraphConfig::default(),
            codebook_episodes: 20,
            codebook_iterations: 40,
            codebook_step: 0.05,
            codebook_samples: 600,
            restarts: 1,
            selection_episodes: 100,
        }
    }
}

/// Learned message attacker: a shared per-channel network scoring every
/// codebook vector, plus the codebook itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerPolicy {
    net: DenseNetwork,
    pub codebook: Vec<[f64; MESSAGE_DIM]>,
    pub epsilon: f64,
    n_agents: usize,
    feature_dim: usize,
}

/// One attacked channel and the codebook entry written into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackChoice {
    pub channel: usize,
    pub code: usize,
}

impl AttackerPolicy {
    pub fn new(n_agents: usize, feature_dim: usize, budget: &AttackBudget, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * feature_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(budget.codebook_size);
        let mut rng = stream_rng(seed, stream::CODEBOOK);
        let codebook = (0..budget.codebook_size)
            .map(|_| {
                let mut v = [0.0; MESSAGE_DIM];
                v.iter_mut().for_each(|x| *x = uniform(&mut rng, -1.0, 1.0));
                v
            })
            .collect();
        Ok(Self {
            net: DenseNetwork::new(&sizes, seed ^ 0xA77A_C4ED)?,
            codebook,
            epsilon: 1.0,
            n_agents,
            feature_dim,
        })
    }

    pub fn from_parts(net: DenseNetwork, codebook: Vec<[f64; MESSAGE_DIM]>, epsilon: f64, n_agents: usize) -> Result<Self> {
        check_len("codebook", net.output_dim(), codebook.len())?;
        if codebook.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("codebook entries must lie in [-1, 1]".into()));
        }
        let feature_dim = net.input_dim() / 2;
        Ok(Self {
            net,
            codebook,
            epsilon,
            n_agents,
            feature_dim,
        })
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn codebook_in_range(&self) -> bool {
        self.codebook.iter().flatten().all(|v| (-1.0..=1.0).contains(v))
    }

    fn channel_q(net: &DenseNetwork, h: &[Vec<f64>], c: ChannelId, cache: &mut ForwardCache, buf: &mut Vec<f64>) -> Result<Vec<f64>> {
        buf.clear();
        buf.extend_from_slice(&h[c.i]);
        buf.extend_from_slice(&h[c.j]);
        Ok(net.forward_cached(buf, cache)?.to_vec())
    }

    /// Epsilon-greedy pick of up to `budget` distinct open channels, each
    /// with its best code.
    pub fn choose(
        &self,
        h: &[Vec<f64>],
        open: &[ChannelId],
        budget: usize,
        epsilon: f64,
        rng: &mut Rng64,
    ) -> Result<Vec<AttackChoice>> {
        check_len("attacker agents", self.n_agents, h.len())?;
        if open.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.n_agents;
        if epsilon > 0.0 && bernoulli(rng, epsilon) {
            let m = self.codebook.len();
            return Ok(choose_distinct(open, budget, rng)
                .into_iter()
                .map(|c| AttackChoice {
                    channel: c.index(n),
                    code: index(rng, m),
                })
                .collect());
        }
        let mut cache = ForwardCache::default();
        let mut buf = Vec::new();
        let mut scored: Vec<(f64, AttackChoice)> = Vec::with_capacity(open.len());
        for &c in open {
            let q = Self::channel_q(&self.net, h, c, &mut cache, &mut buf)?;
            let mut code = 0;
            for (k, &v) in q.iter().enumerate() {
                if v > q[code] {
                    code = k;
                }
            }
            scored.push((
                q[code],
                AttackChoice {
                    channel: c.index(n),
                    code,
                },
            ));
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.channel.cmp(&b.1.channel)));
        Ok(scored.into_iter().take(budget).map(|(_, c)| c).collect())
    }

    /// Writes the chosen codebook vectors into both endpoint slots.
    pub fn perturb(&self, set: &ObservationSet, choices: &[AttackChoice]) -> ObservationSet {
        let mut out = set.clone();
        for ch in choices {
            let c = ChannelId::from_index(ch.channel, set.n_agents());
            let v = self.codebook[ch.code];
            write_channel(&mut out, c, v, v);
        }
        out
    }
}

/// A receiver input with one slot to overwrite, and the clean greedy action.
struct CodebookSample {
    input: Vec<f64>,
    slot_offset: usize,
    clean_action: usize,
}

fn collect_codebook_samples<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<CodebookSample>> {
    let mut gates = stream_rng(seed, stream::GATES);
    let mut rng = stream_rng(seed, stream::CODEBOOK);
    let mut team_rng = stream_rng(seed, stream::EXPLORE);
    let n = env.n_agents();
    let mut samples = Vec::new();
    let mut seen = 0usize;
    for ep in 0..cfg.codebook_episodes {
        let mut state = env.reset(episode_seed(seed ^ 0xC0DE_B00C, ep));
        loop {
            let comm = communicate(env, &state, cp, GateMode::Sampled, &mut gates)?;
            let active = env.active(&state);
            for i in (0..n).filter(|&i| active[i]) {
                let input = comm.messages.policy_input(i);
                let clean_action = team.greedy(&input)?;
                for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
                    if comm.messages.slot(i, j).masked() {
                        continue;
                    }
                    let s = CodebookSample {
                        input: input.clone(),
                        slot_offset: env.obs_dim() + slot * SLOT_WIDTH,
                        clean_action,
                    };
                    // reservoir sampling keeps a uniform subset
                    seen += 1;
                    if samples.len() < cfg.codebook_samples {
                        samples.push(s);
                    } else {
                        let k = index(&mut rng, seen);
                        if k < cfg.codebook_samples {
                            samples[k] = s;
                        }
                    }
                }
            }
            let actions = team.act(&comm.messages, &active, 0.0, &mut team_rng)?;
            let out = env.step(&state, &actions)?;
            if out.is_terminal() {
                break;
            }
            state = out.state;
        }
    }
    Ok(samples)
}

/// Fits each codebook vector by projected sign-gradient steps through the
/// frozen team network. Vector `k` pushes receivers toward action
/// `k mod n_actions`, away from their clean choice.
pub fn train_codebook<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    cfg: &AttackConfig,
    codebook: &mut [[f64; MESSAGE_DIM]],
    seed: u64,
) -> Result<()> {
    let samples = collect_codebook_samples(env, team, cp, cfg, seed)?;
    let net = team.network();
    let n_actions = team.n_actions();
    let mut cache = ForwardCache::default();
    let mut scratch = Gradients::zeros_like(net);
    let mut ig = Vec::new();
    for (k, vector) in codebook.iter_mut().enumerate() {
        let target = k % n_actions;
        let relevant: Vec<&CodebookSample> = samples.iter().filter(|s| s.clean_action != target).collect();
        if relevant.is_empty() {
            continue;
        }
        for _ in 0..cfg.codebook_iterations {
            let mut grad = [0.0; MESSAGE_DIM];
            for s in &relevant {
                let mut x = s.input.clone();
                x[s.slot_offset..s.slot_offset + MESSAGE_DIM].copy_from_slice(vector);
                x[s.slot_offset + MESSAGE_DIM] = 0.0;
                let q = net.forward_cached(&x, &mut cache)?.to_vec();
                let mut rival = if target == 0 { 1 } else { 0 };
                for a in 0..n_actions {
                    if a != target && q[a] > q[rival] {
                        rival = a;
                    }
                }
                // descend on Q(rival) - Q(target)
                let mut out = vec![0.0; n_actions];
                out[rival] = 1.0;
                out[target] = -1.0;
                net.backward_cached(&cache, &out, &mut scratch, Some(&mut ig))?;
                for (g, &v) in grad.iter_mut().zip(&ig[s.slot_offset..s.slot_offset + MESSAGE_DIM]) {
                    *g += v;
                }
            }
            for (v, g) in vector.iter_mut().zip(&grad) {
                *v = (*v - cfg.codebook_step * g.signum()).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct AttackTransition {
    features: Vec<f32>,
    choices: Vec<AttackChoice>,
    reward: f64,
    next_features: Vec<f32>,
    next_open: Vec<usize>,
    terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackCurvePoint {
    pub episode: usize,
    pub attacker_return: f64,
    pub loss: f64,
    pub victim_win: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub attacker: AttackerPolicy,
    pub curve: Vec<AttackCurvePoint>,
}

fn unpack_rows(flat: &[f32], n: usize) -> Vec<Vec<f64>> {
    let d = flat.len() / n.max(1);
    flat.chunks_exact(d.max(1)).map(|c| c.iter().map(|&v| v as f64).collect()).collect()
}

fn attack_update(
    attacker: &mut AttackerPolicy,
    target: &TargetCopy,
    opt: &mut OptimizerState,
    batch: &[&AttackTransition],
    gamma: f64,
) -> Result<f64> {
    let n = attacker.n_agents;
    let net = &attacker.net;
    let mut grads = Gradients::zeros_like(net);
    let mut cache = ForwardCache::default();
    let mut buf = Vec::new();
    let terms: usize = batch.iter().map(|t| t.choices.len()).sum();
    if terms == 0 {
        return Ok(0.0);
    }
    let scale = 2.0 / terms as f64;
    let mut loss = 0.0;
    for tr in batch {
        let mut y = tr.reward;
        if !tr.terminal && !tr.next_open.is_empty() {
            let h_next = unpack_rows(&tr.next_features, n);
            let mut best = f64::NEG_INFINITY;
            for &k in &tr.next_open {
                let c = ChannelId::from_index(k, n);
                let q = AttackerPolicy::channel_q(target.network(), &h_next, c, &mut cache, &mut buf)?;
                best = q.iter().cloned().fold(best, f64::max);
            }
            y += gamma * best;
        }
        let h = unpack_rows(&tr.features, n);
        for ch in &tr.choices {
            let c = ChannelId::from_index(ch.channel, n);
            let q = AttackerPolicy::channel_q(net, &h, c, &mut cache, &mut buf)?;
            let delta = q[ch.code] - y;
            loss += delta * delta;
            let mut out = vec![0.0; q.len()];
            out[ch.code] = scale * delta;
            net.backward_cached(&cache, &out, &mut grads, None)?;
        }
    }
    loss /= terms as f64;
    if !loss.is_finite() || grads.ensure_finite().is_err() {
        return Err(Error::Divergence {
            stage: "learned attack",
            detail: alloc::format!("loss {loss}"),
        });
    }
    apply_update(&mut attacker.net, opt, &grads)?;
    Ok(loss)
}

/// Fits the codebook against the frozen victim, then trains the channel and
/// code selector by Q-learning on the victim's shifted negative reward.
pub fn train_learned_attack<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    cfg: &AttackConfig,
    episodes: usize,
    seed: u64,
) -> Result<AttackOutcome> {
    cfg.budget.validate(env.n_agents())?;
    let n = env.n_agents();
    let fd = env.obs_dim() + cfg.graph.embedding_dim;
    let mut attacker = AttackerPolicy::new(n, fd, &cfg.budget, &cfg.hidden, seed)?;
    if episodes == 0 {
        return Ok(AttackOutcome {
            attacker,
            curve: Vec::new(),
        });
    }
    let mut codebook = attacker.codebook.clone();
    train_codebook(env, team, cp, cfg, &mut codebook, seed)?;
    attacker.codebook = codebook;

    let mut target = TargetCopy::new(&attacker.net);
    let mut opt = OptimizerState::for_network(OptimizerKind::adam(), cfg.learning_rate, &attacker.net);
    if let Some(c) = cfg.grad_clip {
        opt = opt.with_clip(c);
    }
    let mut buffer: ReplayBuffer<AttackTransition> = ReplayBuffer::new(cfg.buffer_capacity);
    let mut replay_rng = stream_rng(seed, stream::REPLAY);
    let mut explore = stream_rng(seed, stream::ATTACK);
    let mut gates = stream_rng(seed, stream::GATES);
    let mut team_rng = stream_rng(seed, stream::EXPLORE);
    let ceiling = env.reward_ceiling();
    let mut curve = Vec::with_capacity(episodes);
    let mut steps = 0usize;
    for ep in 0..episodes {
        let eps = cfg.epsilon.value(ep, episodes);
        let mut state = env.reset(episode_seed(seed, ep));
        let mut comm = communicate(env, &state, cp, GateMode::Sampled, &mut gates)?;
        let mut h = state_features(env, &state, &cfg.graph)?;
        let (mut ret, mut l_sum, mut l_n) = (0.0, 0.0, 0usize);
        let win = loop {
            let open = open_channels(&comm.messages);
            let choices = attacker.choose(&h, &open, cfg.budget.channels, eps, &mut explore)?;
            let attacked = attacker.perturb(&comm.messages, &choices);
            let actions = team.act(&attacked, &env.active(&state), 0.0, &mut team_rng)?;
            let out = env.step(&state, &actions)?;
            let reward = (ceiling - out.team_reward).max(0.0);
            ret += reward;
            let terminal = out.is_terminal();
            let (next_comm, h_next) = if terminal {
                (None, Vec::new())
            } else {
                (
                    Some(communicate(env, &out.state, cp, GateMode::Sampled, &mut gates)?),
                    state_features(env, &out.state, &cfg.graph)?,
                )
            };
            let next_open = next_comm
                .as_ref()
                .map(|c| open_channels(&c.messages).iter().map(|ch| ch.index(n)).collect())
                .unwrap_or_default();
            if !choices.is_empty() {
                buffer.push(AttackTransition {
                    features: pack(&h.concat()),
                    choices,
                    reward,
                    next_features: pack(&h_next.concat()),
                    next_open,
                    terminal,
                });
            }
            steps += 1;
            if steps % cfg.train_every == 0 && buffer.len() >= cfg.batch_size {
                let idx = buffer.sample_indices(cfg.batch_size, &mut replay_rng);
                let batch: Vec<&AttackTransition> = idx.iter().map(|&k| buffer.get(k)).collect();
                l_sum += attack_update(&mut attacker, &target, &mut opt, &batch, cfg.gamma)?;
                l_n += 1;
                target.tick();
                target.sync_if_due(&attacker.net, cfg.target_period);
            }
            if terminal {
                break out.win.unwrap_or(false);
            }
            state = out.state;
            comm = next_comm.expect("non-terminal step has a successor");
            h = h_next;
        };
        debug_assert!(attacker.codebook_in_range());
        curve.push(AttackCurvePoint {
            episode: ep,
            attacker_return: ret,
            loss: if l_n > 0 { l_sum / l_n as f64 } else { 0.0 },
            victim_win: win,
        });
    }
    attacker.epsilon = 0.0;
    Ok(AttackOutcome { attacker, curve })
}

/// Trains `cfg.restarts` attackers and keeps the one under which the victim
/// wins least often on held-out selection episodes. Returns the victim win
/// rate of every restart; with a single restart no selection runs and the
/// result equals [`train_learned_attack`].
pub fn train_strongest_attack<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    cfg: &AttackConfig,
    episodes: usize,
    seed: u64,
) -> Result<(AttackOutcome, Vec<f64>)> {
    if cfg.restarts == 0 {
        return Err(Error::InvalidConfig("attack restarts must be positive".into()));
    }
    if cfg.restarts == 1 {
        return Ok((train_learned_attack(env, team, cp, cfg, episodes, seed)?, Vec::new()));
    }
    if cfg.selection_episodes == 0 {
        return Err(Error::InvalidConfig("selecting among restarts needs selection episodes".into()));
    }
    let selection_seed = derive_seed(seed ^ 0x5E1E_C7ED, 0);
    let mut best: Option<AttackOutcome> = None;
    let mut scores = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let run_seed = if r == 0 { seed } else { derive_seed(seed, r as u64) };
        let out = train_learned_attack(env, team, cp, cfg, episodes, run_seed)?;
        let attack = crate::eval::Attack::Learned {
            attacker: &out.attacker,
            graph: cfg.graph,
            channels: cfg.budget.channels,
        };
        let win = crate::eval::evaluate(env, team, cp, attack, cfg.selection_episodes, selection_seed)?.win_rate;
        if scores.iter().all(|&s| win < s) {
            best = Some(out);
        }
        scores.push(win);
    }
    Ok((best.expect("at least one restart"), scores))
}

/// Applies `mask` to a message set; shared by every masker.
pub fn masked(set: &ObservationSet, mask: &MaskMatrix) -> Result<ObservationSet> {
    apply_mask(set, mask)
}
