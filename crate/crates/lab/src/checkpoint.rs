//! Versioned JSON checkpoints. Every float is written in shortest
//! round-trip form, so a reload reproduces parameters bit for bit.

use std::path::Path;

use dmac_core::adversary::{Budget, DeployedAdversary, MaskingPolicy, MixerKind, MixingCritic};
use dmac_core::attack::AttackerPolicy;
use dmac_core::comm::{CommPolicy, MESSAGE_DIM};
use dmac_core::graph::GraphConfig;
use dmac_core::nn::{Activation, DenseNetwork};
use dmac_core::team::TeamPolicy;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{BudgetMode, GraphBlock, MixerBlock};
use crate::error::LabError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub sizes: Vec<usize>,
    pub activations: Vec<String>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl NetworkRecord {
    pub fn capture(net: &DenseNetwork) -> Self {
        Self {
            sizes: net.sizes().to_vec(),
            activations: net.activations().iter().map(|a| a.name().to_string()).collect(),
            seed: net.seed(),
            params: net.params().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<DenseNetwork, dmac_core::Error> {
        let acts = self
            .activations
            .iter()
            .map(|a| Activation::from_name(a).ok_or_else(|| dmac_core::Error::InvalidConfig(format!("unknown activation `{a}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        DenseNetwork::from_parts(&self.sizes, &acts, self.params.clone(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamCheckpoint {
    pub version: u32,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub team: NetworkRecord,
    pub cp: NetworkRecord,
}

impl TeamCheckpoint {
    pub fn capture(team: &TeamPolicy, cp: &CommPolicy) -> Self {
        Self {
            version: FORMAT_VERSION,
            n_agents: team.n_agents(),
            obs_dim: team.obs_dim(),
            team: NetworkRecord::capture(team.network()),
            cp: NetworkRecord::capture(cp.network()),
        }
    }

    pub fn restore(&self) -> Result<(TeamPolicy, CommPolicy), dmac_core::Error> {
        Ok((
            TeamPolicy::from_network(self.team.restore()?, self.n_agents, self.obs_dim)?,
            CommPolicy::from_network(self.cp.restore()?, self.n_agents, self.obs_dim)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticRecord {
    pub mixer: MixerBlock,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryCheckpoint {
    pub version: u32,
    pub n_agents: usize,
    pub policy: NetworkRecord,
    pub critic: CriticRecord,
    pub graph: GraphBlock,
    pub budget: usize,
    pub budget_mode: BudgetMode,
}

impl AdversaryCheckpoint {
    pub fn capture(policy: &MaskingPolicy, critic: &MixingCritic, graph: GraphConfig, budget: Budget) -> Self {
        let (budget_mode, count) = match budget {
            Budget::Exactly(k) => (BudgetMode::Exactly, k),
            Budget::AtMost(k) => (BudgetMode::AtMost, k),
            Budget::Unlimited => (BudgetMode::Unlimited, 0),
        };
        Self {
            version: FORMAT_VERSION,
            n_agents: policy.n_agents(),
            policy: NetworkRecord::capture(policy.network()),
            critic: CriticRecord {
                mixer: match critic.kind {
                    MixerKind::Linear => MixerBlock::Linear,
                    MixerKind::Vdn => MixerBlock::Vdn,
                },
                weights: critic.weights.clone(),
                bias: critic.bias,
            },
            graph: GraphBlock {
                k: graph.k,
                embedding_dim: graph.embedding_dim,
                min_weight: graph.min_weight,
                radius: graph.radius,
                fully_connected: graph.fully_connected,
                disable_embedding: !graph.enabled,
            },
            budget: count,
            budget_mode,
        }
    }

    pub fn policy(&self) -> Result<MaskingPolicy, dmac_core::Error> {
        MaskingPolicy::from_network(self.policy.restore()?, self.n_agents)
    }

    pub fn critic(&self) -> MixingCritic {
        MixingCritic {
            weights: self.critic.weights.clone(),
            bias: self.critic.bias,
            kind: match self.critic.mixer {
                MixerBlock::Linear => MixerKind::Linear,
                MixerBlock::Vdn => MixerKind::Vdn,
            },
        }
    }

    pub fn budget(&self) -> Budget {
        match self.budget_mode {
            BudgetMode::Exactly => Budget::Exactly(self.budget),
            BudgetMode::AtMost => Budget::AtMost(self.budget),
            BudgetMode::Unlimited => Budget::Unlimited,
        }
    }

    pub fn deployed(&self) -> Result<DeployedAdversary, dmac_core::Error> {
        Ok(DeployedAdversary {
            policy: self.policy()?,
            graph: self.graph.to_core(),
            budget: self.budget(),
        })
    }
}

/// The outcome of adversarial retraining: the new CP (and team, which only
/// changes under joint retraining) plus the refreshed adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainedCheckpoint {
    pub version: u32,
    pub victim: TeamCheckpoint,
    pub adversary: AdversaryCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerCheckpoint {
    pub version: u32,
    pub n_agents: usize,
    pub net: NetworkRecord,
    pub codebook: Vec<[f64; MESSAGE_DIM]>,
    pub epsilon: f64,
    pub graph: GraphBlock,
    pub channels: usize,
}

impl AttackerCheckpoint {
    pub fn capture(attacker: &AttackerPolicy, graph: GraphBlock, channels: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            n_agents: attacker.n_agents(),
            net: NetworkRecord::capture(attacker.network()),
            codebook: attacker.codebook.clone(),
            epsilon: attacker.epsilon,
            graph,
            channels,
        }
    }

    pub fn restore(&self) -> Result<AttackerPolicy, dmac_core::Error> {
        AttackerPolicy::from_parts(self.net.restore()?, self.codebook.clone(), self.epsilon, self.n_agents)
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    std::fs::write(path, to_json_bytes(value)).map_err(|e| LabError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, LabError> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Reads a checkpoint and rejects versions this build does not understand.
pub fn read_versioned<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T, LabError> {
    let value: T = read_json(path)?;
    if value.version() != FORMAT_VERSION {
        return Err(LabError::Artifact {
            path: path.to_path_buf(),
            detail: format!("format version {} (expected {FORMAT_VERSION})", value.version()),
        });
    }
    Ok(value)
}

pub trait Versioned {
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn version(&self) -> u32 {
                self.version
            }
        }
    )*};
}

versioned!(TeamCheckpoint, AdversaryCheckpoint, RetrainedCheckpoint, AttackerCheckpoint);

#[cfg(test)]
mod tests {
    use super::*;
    use dmac_core::adversary::init_adversary;
    use dmac_core::adversary::AdversaryConfig;
    use dmac_core::attack::AttackBudget;

    #[test]
    fn team_round_trip_is_exact() {
        let team = TeamPolicy::new(3, 5, 4, &[7], 11).unwrap();
        let cp = CommPolicy::new(3, 5, &[6], 12).unwrap();
        let ck = TeamCheckpoint::capture(&team, &cp);
        let back: TeamCheckpoint = serde_json::from_slice(&to_json_bytes(&ck)).unwrap();
        assert_eq!(back, ck);
        let (t2, c2) = back.restore().unwrap();
        assert_eq!((t2, c2), (team, cp));
    }

    #[test]
    fn adversary_and_attacker_round_trip() {
        let cfg = AdversaryConfig::default();
        let env = dmac_core::env::relay::RelayTask::new(Default::default()).unwrap();
        let (p, c) = init_adversary(&env, &cfg, 3).unwrap();
        let ck = AdversaryCheckpoint::capture(&p, &c, cfg.graph, Budget::AtMost(2));
        let back: AdversaryCheckpoint = serde_json::from_slice(&to_json_bytes(&ck)).unwrap();
        assert_eq!(back.policy().unwrap(), p);
        assert_eq!(back.critic(), c);
        assert_eq!(back.budget(), Budget::AtMost(2));
        assert_eq!(back.graph.to_core(), cfg.graph);

        let a = AttackerPolicy::new(4, 6, &AttackBudget::default(), &[5], 9).unwrap();
        let ak = AttackerCheckpoint::capture(&a, GraphBlock::default(), 1);
        let back: AttackerCheckpoint = serde_json::from_slice(&to_json_bytes(&ak)).unwrap();
        assert_eq!(back.restore().unwrap(), a);
    }

    #[test]
    fn rejects_unknown_activation() {
        let mut r = NetworkRecord::capture(&DenseNetwork::new(&[2, 3, 1], 1).unwrap());
        r.activations[0] = "swish".into();
        assert!(r.restore().is_err());
    }
}
