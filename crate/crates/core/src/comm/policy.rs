use alloc::vec;
use alloc::vec::Vec;

use super::{channels, n_channels, ChannelBits, CommDecision, MaskMatrix};
use crate::error::{check_len, Error, Result};
use crate::nn::{apply_update, DenseNetwork, ForwardCache, Gradients, OptimizerState};
use crate::rng::Rng64;
use rand::Rng;

/// Gate probabilities are kept inside `[P_MIN, 1 - P_MIN]`.
pub const P_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// Bernoulli draw from each channel's probability (training).
    Sampled,
    /// Open iff the probability is at least 0.5 (evaluation).
    Greedy,
    /// Every channel open, ignoring the network.
    Always,
    /// Every channel closed, ignoring the network.
    Never,
}

/// Shared gate network scoring each channel from its endpoints' features.
///
/// Agent features are the local observation followed by a one-hot agent id;
/// the network sees `[f_i, f_j]` with `i < j` and outputs a gate logit.
#[derive(Debug, Clone, PartialEq)]
pub struct CommPolicy {
    net: DenseNetwork,
    n_agents: usize,
    obs_dim: usize,
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    };
    p.clamp(P_MIN, 1.0 - P_MIN)
}

impl CommPolicy {
    pub fn new(n_agents: usize, obs_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * (obs_dim + n_agents)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: DenseNetwork::new(&sizes, seed)?,
            n_agents,
            obs_dim,
        })
    }

    pub fn from_network(net: DenseNetwork, n_agents: usize, obs_dim: usize) -> Result<Self> {
        check_len("gate network input", 2 * (obs_dim + n_agents), net.input_dim())?;
        check_len("gate network output", 1, net.output_dim())?;
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

    pub fn feature_dim(&self) -> usize {
        self.obs_dim + self.n_agents
    }

    /// Per-agent gate features: observation then one-hot id.
    pub fn agent_features(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_len("agents", self.n_agents, obs.len())?;
        obs.iter()
            .enumerate()
            .map(|(i, o)| {
                check_len("observation", self.obs_dim, o.len())?;
                let mut f = o.clone();
                f.resize(self.feature_dim(), 0.0);
                f[self.obs_dim + i] = 1.0;
                Ok(f)
            })
            .collect()
    }

    fn pair_input(features: &[Vec<f64>], i: usize, j: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&features[i]);
        buf.extend_from_slice(&features[j]);
    }

    /// Gate probability of every channel, in channel order.
    pub fn probabilities(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_len("agents", self.n_agents, features.len())?;
        for f in features {
            check_len("gate features", self.feature_dim(), f.len())?;
        }
        let mut cache = ForwardCache::default();
        let mut buf = Vec::with_capacity(2 * self.feature_dim());
        channels(self.n_agents)
            .map(|c| {
                Self::pair_input(features, c.i, c.j, &mut buf);
                Ok(sigmoid(self.net.forward_cached(&buf, &mut cache)?[0]))
            })
            .collect()
    }
}

/// Turns per-channel probabilities into gates.
pub fn decide_from_probabilities(n: usize, probs: &[f64], mode: GateMode, rng: &mut Rng64) -> Result<CommDecision> {
    check_len("gate probabilities", n_channels(n), probs.len())?;
    let bits = match mode {
        GateMode::Always => vec![true; probs.len()],
        GateMode::Never => vec![false; probs.len()],
        GateMode::Greedy => probs.iter().map(|&p| p >= 0.5).collect(),
        GateMode::Sampled => probs.iter().map(|&p| rng.gen::<f64>() < p).collect(),
    };
    ChannelBits::from_bits(n, bits)
}

pub fn cp_decide(cp: &CommPolicy, features: &[Vec<f64>], mode: GateMode, rng: &mut Rng64) -> Result<CommDecision> {
    match mode {
        GateMode::Always => Ok(ChannelBits::ones(cp.n_agents)),
        GateMode::Never => Ok(ChannelBits::zeros(cp.n_agents)),
        _ => {
            let probs = cp.probabilities(features)?;
            decide_from_probabilities(cp.n_agents, &probs, mode, rng)
        }
    }
}

/// One time step recorded for gate training.
#[derive(Debug, Clone, PartialEq)]
pub struct CpStep {
    pub features: Vec<Vec<f64>>,
    pub gates: CommDecision,
    pub masked: MaskMatrix,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CpEpisode {
    pub steps: Vec<CpStep>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CpTrainStats {
    pub mean_probability: f64,
    pub mean_return: f64,
    /// Channel-steps in the batch.
    pub terms: usize,
}

/// REINFORCE update of the gate network.
///
/// Each channel's return is the discounted team return minus `comm_cost`
/// times the discounted count of its own future deliveries; a per-time-step
/// batch mean serves as the baseline. A masked channel-step enters the
/// gradient as a closed gate: nothing was delivered and nothing is charged.
pub fn train_cp_step(
    cp: &mut CommPolicy,
    optimizer: &mut OptimizerState,
    batch: &[CpEpisode],
    comm_cost: f64,
    gamma: f64,
    entropy_coef: f64,
) -> Result<CpTrainStats> {
    if batch.is_empty() || batch.iter().all(|e| e.steps.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let n = cp.n_agents;
    let n_ch = n_channels(n);
    let horizon = batch.iter().map(|e| e.steps.len()).max().unwrap_or(0);

    // per-episode, per-step, per-channel returns
    let mut returns: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.len());
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    let mut team_total = 0.0;
    for ep in batch {
        let t_len = ep.steps.len();
        let mut g = 0.0;
        let mut cost = vec![0.0; n_ch];
        let mut ep_ret = vec![vec![0.0; n_ch]; t_len];
        for t in (0..t_len).rev() {
            let step = &ep.steps[t];
            check_len("step gates", n_ch, step.gates.len())?;
            check_len("step mask", n_ch, step.masked.len())?;
            g = step.reward + gamma * g;
            for (k, c) in cost.iter_mut().enumerate() {
                let delivered = step.gates.get_index(k) && !step.masked.get_index(k);
                *c = delivered as u8 as f64 + gamma * *c;
                ep_ret[t][k] = g - comm_cost * *c;
                sums[t] += ep_ret[t][k];
                counts[t] += 1;
            }
        }
        team_total += g;
        returns.push(ep_ret);
    }
    let baseline: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    let terms: usize = counts.iter().sum();
    let mut grads = Gradients::zeros_like(&cp.net);
    let mut cache = ForwardCache::default();
    let mut buf = Vec::with_capacity(2 * cp.feature_dim());
    let mut prob_sum = 0.0;
    let scale = 1.0 / terms.max(1) as f64;
    for (ep, ep_ret) in batch.iter().zip(&returns) {
        for (t, step) in ep.steps.iter().enumerate() {
            check_len("agents", n, step.features.len())?;
            for (k, c) in channels(n).enumerate() {
                CommPolicy::pair_input(&step.features, c.i, c.j, &mut buf);
                let z = cp.net.forward_cached(&buf, &mut cache)?[0];
                let p = sigmoid(z);
                prob_sum += p;
                let gate = (step.gates.get_index(k) && !step.masked.get_index(k)) as u8 as f64;
                let advantage = ep_ret[t][k] - baseline[t];
                // d/dz of log Bernoulli(gate; sigmoid(z)) is gate - p
                let mut ascent = advantage * (gate - p);
                if entropy_coef != 0.0 {
                    ascent += entropy_coef * p * (1.0 - p) * libm::log((1.0 - p) / p);
                }
                if ascent != 0.0 {
                    cp.net.backward_cached(&cache, &[-ascent * scale], &mut grads, None)?;
                }
            }
        }
    }
    if terms > 0 {
        grads.ensure_finite().map_err(|_| Error::Divergence {
            stage: "communication policy",
            detail: "non-finite policy gradient".into(),
        })?;
        apply_update(&mut cp.net, optimizer, &grads)?;
    }
    Ok(CpTrainStats {
        mean_probability: prob_sum * scale,
        mean_return: team_total / batch.len() as f64,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};

    #[test]
    fn extreme_probabilities() {
        let mut rng = stream_rng(0, stream::GATES);
        let all = decide_from_probabilities(4, &[1.0; 6], GateMode::Sampled, &mut rng).unwrap();
        assert_eq!(all.count(), 6);
        let none = decide_from_probabilities(4, &[0.0; 6], GateMode::Sampled, &mut rng).unwrap();
        assert_eq!(none.count(), 0);
        let tie = decide_from_probabilities(2, &[0.5], GateMode::Greedy, &mut rng).unwrap();
        assert_eq!(tie.count(), 1);
    }

    #[test]
    fn sampled_decisions_replay() {
        let cp = CommPolicy::new(4, 3, &[8], 1).unwrap();
        let obs = vec![vec![0.2, -0.1, 0.5]; 4];
        let f = cp.agent_features(&obs).unwrap();
        let mut a = stream_rng(9, stream::GATES);
        let mut b = stream_rng(9, stream::GATES);
        for _ in 0..10 {
            assert_eq!(
                cp_decide(&cp, &f, GateMode::Sampled, &mut a).unwrap(),
                cp_decide(&cp, &f, GateMode::Sampled, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn probabilities_stay_open_interval() {
        let mut cp = CommPolicy::new(3, 2, &[4], 2).unwrap();
        cp.network_mut().params_mut().iter_mut().for_each(|p| *p *= 1e4);
        let f = cp.agent_features(&vec![vec![1.0, -1.0]; 3]).unwrap();
        for p in cp.probabilities(&f).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let mut cp = CommPolicy::new(2, 2, &[4], 0).unwrap();
        let mut opt = OptimizerState::sgd(0.1, cp.network().n_params());
        assert_eq!(train_cp_step(&mut cp, &mut opt, &[], 0.0, 0.9, 0.0), Err(Error::EmptyBatch));
    }

    #[test]
    fn zero_advantage_leaves_parameters() {
        let mut cp = CommPolicy::new(2, 2, &[4], 0).unwrap();
        let before = cp.clone();
        let mut opt = OptimizerState::sgd(0.1, cp.network().n_params());
        let f = cp.agent_features(&vec![vec![0.3, 0.1]; 2]).unwrap();
        let ep = |gate: bool| CpEpisode {
            steps: vec![CpStep {
                features: f.clone(),
                gates: ChannelBits::from_bits(2, vec![gate]).unwrap(),
                masked: ChannelBits::zeros(2),
                reward: 1.0,
            }],
        };
        train_cp_step(&mut cp, &mut opt, &[ep(true), ep(false)], 0.0, 0.9, 0.0).unwrap();
        assert_eq!(cp, before);
    }

    #[test]
    fn rewarded_gate_becomes_more_likely() {
        let mut cp = CommPolicy::new(2, 1, &[4], 3).unwrap();
        let mut opt = OptimizerState::sgd(0.5, cp.network().n_params());
        let f = cp.agent_features(&vec![vec![1.0]; 2]).unwrap();
        let p0 = cp.probabilities(&f).unwrap()[0];
        let ep = |gate: bool, r: f64| CpEpisode {
            steps: vec![CpStep {
                features: f.clone(),
                gates: ChannelBits::from_bits(2, vec![gate]).unwrap(),
                masked: ChannelBits::zeros(2),
                reward: r,
            }],
        };
        for _ in 0..20 {
            train_cp_step(&mut cp, &mut opt, &[ep(true, 1.0), ep(false, 0.0)], 0.0, 0.9, 0.0).unwrap();
        }
        assert!(cp.probabilities(&f).unwrap()[0] > p0 + 0.1);
    }
}
