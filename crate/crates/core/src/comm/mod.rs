//! Channelized messages between agents.
//!
//! Every unordered agent pair `(i, j)`, `i < j`, is one channel. Channels are
//! numbered lexicographically: `(0,1), (0,2), .., (0,n-1), (1,2), ..`.
//! A message slot holds an 8-dimensional encoded observation or the null
//! value; in policy inputs a slot occupies 9 numbers, the content (zeros
//! when null) followed by a null flag.

mod policy;

pub use policy::{cp_decide, train_cp_step, CommPolicy, CpEpisode, CpStep, CpTrainStats, GateMode};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

pub const MESSAGE_DIM: usize = 8;
/// Width of one slot inside a policy input.
pub const SLOT_WIDTH: usize = MESSAGE_DIM + 1;

pub fn n_channels(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId {
    pub i: usize,
    pub j: usize,
}

impl ChannelId {
    /// Channel between two distinct agents, in either order.
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidConfig("a channel needs two distinct agents".into()));
        }
        Ok(Self {
            i: a.min(b),
            j: a.max(b),
        })
    }

    /// Position in the lexicographic channel order for `n` agents.
    pub fn index(self, n: usize) -> usize {
        self.i * n - self.i * (self.i + 1) / 2 + (self.j - self.i - 1)
    }

    pub fn from_index(index: usize, n: usize) -> Self {
        let mut rest = index;
        for i in 0..n {
            let row = n - i - 1;
            if rest < row {
                return Self { i, j: i + 1 + rest };
            }
            rest -= row;
        }
        panic!("channel index {index} out of range for {n} agents");
    }

    pub fn touches(self, agent: usize) -> bool {
        self.i == agent || self.j == agent
    }
}

/// All channels for `n` agents in index order.
pub fn channels(n: usize) -> impl Iterator<Item = ChannelId> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| ChannelId { i, j }))
}

/// One bit per channel. Used both for gate decisions and for mask actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChannelBits {
    n: usize,
    bits: Vec<bool>,
}

/// Per-channel communicate/stay-silent decision of the communication policy.
pub type CommDecision = ChannelBits;
/// Per-channel mask action; `true` masks the channel.
pub type MaskMatrix = ChannelBits;

impl ChannelBits {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n_channels(n)],
        }
    }

    pub fn ones(n: usize) -> Self {
        Self {
            n,
            bits: vec![true; n_channels(n)],
        }
    }

    pub fn from_bits(n: usize, bits: Vec<bool>) -> Result<Self> {
        check_len("channel bits", n_channels(n), bits.len())?;
        Ok(Self { n, bits })
    }

    pub fn from_channels(n: usize, set: impl IntoIterator<Item = ChannelId>) -> Self {
        let mut out = Self::zeros(n);
        for c in set {
            out.set(c, true);
        }
        out
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, c: ChannelId) -> bool {
        self.bits[c.index(self.n)]
    }

    pub fn get_index(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, c: ChannelId, value: bool) {
        let k = c.index(self.n);
        self.bits[k] = value;
    }

    pub fn set_index(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> impl Iterator<Item = ChannelId> + '_ {
        let n = self.n;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| ChannelId::from_index(k, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageSlot {
    content: Option<[f64; MESSAGE_DIM]>,
}

impl MessageSlot {
    pub const NULL: MessageSlot = MessageSlot { content: None };

    pub fn filled(content: [f64; MESSAGE_DIM]) -> Self {
        Self { content: Some(content) }
    }

    pub fn content(&self) -> Option<&[f64; MESSAGE_DIM]> {
        self.content.as_ref()
    }

    /// The flag carried next to the content; set exactly for null slots.
    pub fn masked(&self) -> bool {
        self.content.is_none()
    }

    /// Content (zeros if null) followed by the null flag.
    pub fn write_features(&self, out: &mut [f64]) {
        match &self.content {
            Some(c) => {
                out[..MESSAGE_DIM].copy_from_slice(c);
                out[MESSAGE_DIM] = 0.0;
            }
            None => {
                out[..MESSAGE_DIM].iter_mut().for_each(|v| *v = 0.0);
                out[MESSAGE_DIM] = 1.0;
            }
        }
    }
}

/// Fixed linear map from an observation to a message, squashed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEncoder {
    obs_dim: usize,
    /// `MESSAGE_DIM x obs_dim`, row-major.
    weights: Vec<f64>,
}

impl MessageEncoder {
    pub fn new(obs_dim: usize, weights: Vec<f64>) -> Result<Self> {
        check_len("encoder weights", MESSAGE_DIM * obs_dim, weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite { what: "encoder weights" });
        }
        Ok(Self { obs_dim, weights })
    }

    /// Selects the first `MESSAGE_DIM` observation entries.
    pub fn leading(obs_dim: usize) -> Self {
        let mut weights = vec![0.0; MESSAGE_DIM * obs_dim];
        for k in 0..MESSAGE_DIM.min(obs_dim) {
            weights[k * obs_dim + k] = 1.0;
        }
        Self { obs_dim, weights }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn encode(&self, obs: &[f64]) -> Result<[f64; MESSAGE_DIM]> {
        check_len("observation", self.obs_dim, obs.len())?;
        let mut out = [0.0; MESSAGE_DIM];
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.obs_dim.max(1))) {
            let z: f64 = row.iter().zip(obs).map(|(w, x)| w * x).sum();
            *o = libm::tanh(z);
        }
        Ok(out)
    }
}

/// Local observations plus one message slot per (receiver, sender) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n: usize,
    own: Vec<Vec<f64>>,
    /// `slots[i * n + j]`: what agent `i` holds from agent `j`.
    slots: Vec<MessageSlot>,
}

impl ObservationSet {
    /// Observations with every slot null.
    pub fn silent(own: Vec<Vec<f64>>) -> Self {
        let n = own.len();
        Self {
            n,
            own,
            slots: vec![MessageSlot::NULL; n * n],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn own(&self, i: usize) -> &[f64] {
        &self.own[i]
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.own
    }

    pub fn slot(&self, receiver: usize, sender: usize) -> &MessageSlot {
        &self.slots[receiver * self.n + sender]
    }

    pub fn set_slot(&mut self, receiver: usize, sender: usize, slot: MessageSlot) {
        self.slots[receiver * self.n + sender] = slot;
    }

    /// Width of [`policy_input`](Self::policy_input) for observation length
    /// `obs_dim`.
    pub fn input_dim(obs_dim: usize, n: usize) -> usize {
        obs_dim + (n - 1) * SLOT_WIDTH
    }

    /// `o_i` followed by the slots from every other agent in index order.
    pub fn policy_input(&self, i: usize) -> Vec<f64> {
        let obs_dim = self.own[i].len();
        let mut out = vec![0.0; Self::input_dim(obs_dim, self.n)];
        self.write_policy_input(i, &mut out);
        out
    }

    pub fn write_policy_input(&self, i: usize, out: &mut [f64]) {
        let obs_dim = self.own[i].len();
        out[..obs_dim].copy_from_slice(&self.own[i]);
        let mut off = obs_dim;
        for j in (0..self.n).filter(|&j| j != i) {
            self.slot(i, j).write_features(&mut out[off..off + SLOT_WIDTH]);
            off += SLOT_WIDTH;
        }
    }
}

/// Fills both slots of every open channel with the partner's encoded
/// observation; closed channels stay null.
pub fn exchange(obs: &[Vec<f64>], decision: &CommDecision, encoder: &MessageEncoder) -> Result<ObservationSet> {
    check_len("decision agents", obs.len(), decision.n_agents())?;
    let mut set = ObservationSet::silent(obs.to_vec());
    let mut messages: Vec<Option<[f64; MESSAGE_DIM]>> = vec![None; obs.len()];
    for c in decision.active() {
        for (receiver, sender) in [(c.i, c.j), (c.j, c.i)] {
            if messages[sender].is_none() {
                messages[sender] = Some(encoder.encode(&obs[sender])?);
            }
            set.set_slot(receiver, sender, MessageSlot::filled(messages[sender].unwrap()));
        }
    }
    Ok(set)
}

/// Nulls both endpoint slots of every masked channel and leaves everything
/// else untouched.
pub fn apply_mask(set: &ObservationSet, mask: &MaskMatrix) -> Result<ObservationSet> {
    check_len("mask agents", set.n_agents(), mask.n_agents())?;
    let mut out = set.clone();
    for c in mask.active() {
        out.set_slot(c.i, c.j, MessageSlot::NULL);
        out.set_slot(c.j, c.i, MessageSlot::NULL);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommRecord {
    pub episode: u64,
    pub t: usize,
    pub channel: ChannelId,
    pub opened: bool,
    pub masked: bool,
}

impl CommRecord {
    /// Whether a message actually reached both endpoints.
    pub fn delivered(&self) -> bool {
        self.opened && !self.masked
    }
}

/// Per-step channel events: one record for each channel that was opened by
/// the gate or masked by an adversary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLog {
    pub records: Vec<CommRecord>,
}

impl CommLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_step(&mut self, episode: u64, t: usize, decision: &CommDecision, mask: &MaskMatrix) {
        for k in 0..decision.len() {
            let opened = decision.get_index(k);
            let masked = mask.get_index(k);
            if opened || masked {
                self.records.push(CommRecord {
                    episode,
                    t,
                    channel: ChannelId::from_index(k, decision.n_agents()),
                    opened,
                    masked,
                });
            }
        }
    }

    pub fn delivered(&self) -> usize {
        self.records.iter().filter(|r| r.delivered()).count()
    }

    pub fn opened_count(&self, episode: u64, channel: ChannelId) -> usize {
        self.records
            .iter()
            .filter(|r| r.episode == episode && r.channel == channel && r.opened)
            .count()
    }

    pub fn extend(&mut self, other: CommLog) {
        self.records.extend(other.records);
    }
}
