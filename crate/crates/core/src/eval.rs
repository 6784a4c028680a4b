//! Frozen-policy evaluation and communication-frequency statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::adversary::DeployedAdversary;
use crate::attack::{heuristic_attack, open_channels, random_masker, reward_based_masker, AttackBudget, AttackerPolicy};
use crate::comm::{apply_mask, channels, n_channels, ChannelBits, ChannelId, CommLog, CommPolicy, GateMode, ObservationSet};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::graph::{state_features, state_graph, GraphConfig};
use crate::rng::{stream, stream_rng, Rng64};
use crate::rollout::{communicate, episode_seed};
use crate::team::TeamPolicy;

/// Maps a delivered message set to per-agent actions.
pub trait Actor {
    fn act(&self, set: &ObservationSet, active: &[bool], rng: &mut Rng64) -> Result<Vec<usize>>;
}

impl Actor for TeamPolicy {
    fn act(&self, set: &ObservationSet, active: &[bool], rng: &mut Rng64) -> Result<Vec<usize>> {
        TeamPolicy::act(self, set, active, 0.0, rng)
    }
}

/// What happens to messages between the gates and the team.
#[derive(Debug, Clone, Copy)]
pub enum Attack<'a> {
    Clean,
    Heuristic(AttackBudget),
    Learned { attacker: &'a AttackerPolicy, graph: GraphConfig, channels: usize },
    RandomMasker,
    RewardBased(GraphConfig),
    Adversary(&'a DeployedAdversary),
}

impl Attack<'_> {
    pub fn tag(&self) -> &'static str {
        match self {
            Attack::Clean => "clean",
            Attack::Heuristic(_) => "heuristic",
            Attack::Learned { .. } => "learned",
            Attack::RandomMasker => "random_masker",
            Attack::RewardBased(_) => "reward_based",
            Attack::Adversary(_) => "adversary",
        }
    }
}

/// Mean delivered communications per channel per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    n: usize,
    /// Upper triangle in channel order.
    values: Vec<f64>,
}

impl FrequencyMatrix {
    pub fn from_channel_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("frequency matrix needs at least 2 agents".into()));
        }
        crate::error::check_len("channel frequencies", n_channels(n), values.len())?;
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("frequencies must be finite and non-negative".into()));
        }
        Ok(Self { n, values })
    }

    /// Delivered events of `log` divided by `episodes`.
    pub fn from_log(log: &CommLog, n: usize, episodes: usize) -> Result<Self> {
        if episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be positive".into()));
        }
        let mut counts = vec![0usize; n_channels(n)];
        for r in log.records.iter().filter(|r| r.delivered()) {
            counts[r.channel.index(n)] += 1;
        }
        Self::from_channel_values(n, counts.iter().map(|&c| c as f64 / episodes as f64).collect())
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    /// Entry `(i, j)`; `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        ChannelId::new(i, j).ok().map(|c| self.values[c.index(self.n)])
    }

    pub fn channel_values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major `n x n` view with `None` on the diagonal.
    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencySummary {
    pub high: f64,
    pub low: f64,
    pub average: f64,
    /// Population standard deviation.
    pub sd: f64,
}

pub fn frequency_summary(m: &FrequencyMatrix) -> FrequencySummary {
    summarize(m.channel_values())
}

fn summarize(v: &[f64]) -> FrequencySummary {
    let k = v.len() as f64;
    let average = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - average) * (x - average)).sum::<f64>() / k;
    FrequencySummary {
        high: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        low: v.iter().cloned().fold(f64::INFINITY, f64::min),
        average: average.clamp(
            v.iter().cloned().fold(f64::INFINITY, f64::min),
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
        sd: libm::sqrt(var),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub condition: String,
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    /// Channel-steps masked by the condition.
    pub masks: usize,
    /// Channel-steps whose content an attack rewrote.
    pub perturbed: usize,
    pub frequency: FrequencyMatrix,
    pub summary: FrequencySummary,
}

/// Evaluation of frozen policies under one attack condition: the team acts
/// greedily, the gates are sampled from their probabilities.
pub fn evaluate<E: Environment, A: Actor>(
    env: &E,
    team: &A,
    cp: &CommPolicy,
    attack: Attack<'_>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_logged(env, team, cp, attack, episodes, seed).map(|(r, _)| r)
}

/// [`evaluate`] that also returns the per-step communication log.
pub fn evaluate_logged<E: Environment, A: Actor>(
    env: &E,
    team: &A,
    cp: &CommPolicy,
    attack: Attack<'_>,
    episodes: usize,
    seed: u64,
) -> Result<(EvalReport, CommLog)> {
    evaluate_traced(env, team, cp, attack, episodes, seed, 0).map(|(r, l, _)| (r, l))
}

/// One step of an evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub episode: usize,
    pub t: usize,
    pub positions: Vec<(i64, i64)>,
    pub actions: Vec<usize>,
    pub team_reward: f64,
    /// Channels masked this step, in channel order.
    pub masked: Vec<ChannelId>,
}

/// [`evaluate_logged`] that also records the first `traced` episodes step
/// by step. Tracing does not change the report.
pub fn evaluate_traced<E: Environment, A: Actor>(
    env: &E,
    team: &A,
    cp: &CommPolicy,
    attack: Attack<'_>,
    episodes: usize,
    seed: u64,
    traced: usize,
) -> Result<(EvalReport, CommLog, Vec<TraceStep>)> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let n = env.n_agents();
    let mut gates = stream_rng(seed, stream::GATES);
    let mut attack_rng = stream_rng(seed, stream::EVAL);
    let mut act_rng = stream_rng(seed, stream::EXPLORE);
    let mut log = CommLog::new();
    let mut trace = Vec::new();
    let (mut wins, mut total, mut masks, mut perturbed) = (0usize, 0.0, 0usize, 0usize);
    for ep in 0..episodes {
        let mut state = env.reset(episode_seed(seed, ep));
        let mut last_rewards = vec![0.0; n];
        let win = loop {
            let t = env.time(&state);
            let comm = communicate(env, &state, cp, GateMode::Sampled, &mut gates)?;
            let mask = match attack {
                Attack::RandomMasker => random_masker(n, &mut attack_rng),
                Attack::RewardBased(g) => reward_based_masker(&last_rewards, &state_graph(env, &state, &g)?, &mut attack_rng)?,
                Attack::Adversary(adv) => adv.mask(env, &state)?,
                _ => ChannelBits::zeros(n),
            };
            let mut delivered = apply_mask(&comm.messages, &mask)?;
            match attack {
                Attack::Heuristic(budget) => {
                    perturbed += budget.channels.min(open_channels(&delivered).len());
                    delivered = heuristic_attack(&delivered, &budget, &mut attack_rng);
                }
                Attack::Learned {
                    attacker,
                    graph,
                    channels,
                } => {
                    let h = state_features(env, &state, &graph)?;
                    let open = open_channels(&delivered);
                    let choices = attacker.choose(&h, &open, channels, attacker.epsilon, &mut attack_rng)?;
                    perturbed += choices.len();
                    delivered = attacker.perturb(&delivered, &choices);
                }
                _ => {}
            }
            masks += mask.count();
            log.record_step(ep as u64, t, &comm.decision, &mask);
            let actions = team.act(&delivered, &env.active(&state), &mut act_rng)?;
            let out = env.step(&state, &actions)?;
            total += out.team_reward;
            if ep < traced {
                trace.push(TraceStep {
                    episode: ep,
                    t,
                    positions: env.positions(&state),
                    actions: actions.clone(),
                    team_reward: out.team_reward,
                    masked: mask.active().collect(),
                });
            }
            if out.is_terminal() {
                break out.win.unwrap_or(false);
            }
            last_rewards = out.agent_rewards;
            state = out.state;
        };
        wins += win as usize;
    }
    let frequency = FrequencyMatrix::from_log(&log, n, episodes)?;
    let summary = frequency_summary(&frequency);
    Ok((
        EvalReport {
            condition: attack.tag().into(),
            episodes,
            wins,
            win_rate: wins as f64 / episodes as f64,
            mean_return: total / episodes as f64,
            masks,
            perturbed,
            frequency,
            summary,
        },
        log,
        trace,
    ))
}

/// Channels that delivered at least once in `log`.
pub fn used_channels(log: &CommLog) -> Vec<ChannelId> {
    let mut out: Vec<ChannelId> = Vec::new();
    for r in log.records.iter().filter(|r| r.delivered()) {
        if !out.contains(&r.channel) {
            out.push(r.channel);
        }
    }
    out.sort_by_key(|c| (c.i, c.j));
    out
}

/// All channels of an `n`-agent team, for iteration in reports.
pub fn channel_list(n: usize) -> Vec<ChannelId> {
    channels(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::relay::{RelayConfig, RelayTask};

    #[test]
    fn summary_by_hand() {
        let m = FrequencyMatrix::from_channel_values(3, vec![2.0, 4.0, 6.0]).unwrap();
        let s = frequency_summary(&m);
        assert_eq!((s.high, s.low, s.average), (6.0, 2.0, 4.0));
        assert!((s.sd - libm::sqrt(8.0 / 3.0)).abs() < 1e-12);
        let c = frequency_summary(&FrequencyMatrix::from_channel_values(4, vec![1.5; 6]).unwrap());
        assert_eq!((c.high, c.low, c.average, c.sd), (1.5, 1.5, 1.5, 0.0));
    }

    #[test]
    fn matrix_is_symmetric_with_empty_diagonal() {
        let m = FrequencyMatrix::from_channel_values(3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.get(0, 0), None);
        assert_eq!(m.get(2, 1), Some(3.0));
        assert_eq!(m.get(1, 2), Some(3.0));
        assert!(FrequencyMatrix::from_channel_values(3, vec![1.0, -2.0, 3.0]).is_err());
        assert!(FrequencyMatrix::from_channel_values(1, vec![]).is_err());
    }

    struct Fixed(usize);

    impl Actor for Fixed {
        fn act(&self, _: &ObservationSet, active: &[bool], _: &mut Rng64) -> Result<Vec<usize>> {
            Ok(vec![self.0; active.len()])
        }
    }

    #[test]
    fn reports_replay_and_count() {
        let env = RelayTask::new(RelayConfig::default()).unwrap();
        let cp = CommPolicy::new(4, env.obs_dim(), &[8], 3).unwrap();
        let (a, log) = evaluate_logged(&env, &Fixed(1), &cp, Attack::RandomMasker, 40, 9).unwrap();
        let b = evaluate(&env, &Fixed(1), &cp, Attack::RandomMasker, 40, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.win_rate, a.wins as f64 / 40.0);
        assert_eq!(a.masks, 40 * env.horizon());
        let total: f64 = a.frequency.channel_values().iter().sum::<f64>() * 40.0;
        assert!((total - log.delivered() as f64).abs() < 1e-9);
        assert!(evaluate(&env, &Fixed(1), &cp, Attack::Clean, 0, 9).is_err());
        let (c, _, trace) = evaluate_traced(&env, &Fixed(1), &cp, Attack::RandomMasker, 40, 9, 2).unwrap();
        assert_eq!(c, a);
        assert_eq!(trace.len(), 2 * env.horizon());
        assert!(trace.iter().all(|s| s.masked.len() == 1 && s.actions == [1; 4]));
    }
}
