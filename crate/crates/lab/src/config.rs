//! Experiment configuration: one TOML document with a block per stage.

use std::path::Path;

use dmac_core::adversary::{AdversaryConfig, Budget, MixerKind};
use dmac_core::attack::{AttackBudget, AttackConfig};
use dmac_core::env::prey::PredatorPreyConfig;
use dmac_core::env::relay::RelayConfig;
use dmac_core::env::traffic::TrafficJunctionConfig;
use dmac_core::graph::GraphConfig;
use dmac_core::retrain::RetrainSchedule;
use dmac_core::rollout::EpsilonSchedule;
use dmac_core::team::{CommMode, TeamConfig};
use serde::{Deserialize, Serialize};

use crate::error::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvBlock,
    pub team: TeamBlock,
    pub adversary: AdversaryBlock,
    pub retrain: RetrainBlock,
    pub attack: AttackBlock,
    pub eval: EvalBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            env: EnvBlock::default(),
            team: TeamBlock::default(),
            adversary: AdversaryBlock::default(),
            retrain: RetrainBlock::default(),
            attack: AttackBlock::default(),
            eval: EvalBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Traffic,
    Prey,
    Relay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvBlock {
    pub kind: EnvKind,
    pub traffic: TrafficBlock,
    pub prey: PreyBlock,
    pub relay: RelayBlock,
}

impl Default for EnvBlock {
    fn default() -> Self {
        Self {
            kind: EnvKind::Traffic,
            traffic: TrafficBlock::default(),
            prey: PreyBlock::default(),
            relay: RelayBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficBlock {
    pub n_cars: usize,
    pub size: usize,
    pub horizon: usize,
    pub vision: usize,
    pub min_gap: usize,
    pub max_gap: usize,
    pub max_offset: usize,
    pub intersection_zone: usize,
    pub collision_reward: f64,
    pub time_penalty: f64,
}

impl Default for TrafficBlock {
    fn default() -> Self {
        let c = TrafficJunctionConfig::default();
        Self {
            n_cars: c.n_cars,
            size: c.size,
            horizon: c.horizon,
            vision: c.vision,
            min_gap: c.min_gap,
            max_gap: c.max_gap,
            max_offset: c.max_offset,
            intersection_zone: c.intersection_zone,
            collision_reward: c.collision_reward,
            time_penalty: c.time_penalty,
        }
    }
}

impl TrafficBlock {
    pub fn to_core(&self) -> TrafficJunctionConfig {
        TrafficJunctionConfig {
            n_cars: self.n_cars,
            size: self.size,
            horizon: self.horizon,
            vision: self.vision,
            min_gap: self.min_gap,
            max_gap: self.max_gap,
            max_offset: self.max_offset,
            intersection_zone: self.intersection_zone,
            collision_reward: self.collision_reward,
            time_penalty: self.time_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreyBlock {
    pub n_predators: usize,
    pub size: usize,
    pub horizon: usize,
    pub vision: f64,
    pub capture_radius: f64,
    pub predators_to_capture: usize,
    pub capture_threshold: usize,
    pub capture_reward: f64,
    pub distance_weight: f64,
    pub predator_period: usize,
}

impl Default for PreyBlock {
    fn default() -> Self {
        let c = PredatorPreyConfig::default();
        Self {
            n_predators: c.n_predators,
            size: c.size,
            horizon: c.horizon,
            vision: c.vision,
            capture_radius: c.capture_radius,
            predators_to_capture: c.predators_to_capture,
            capture_threshold: c.capture_threshold,
            capture_reward: c.capture_reward,
            distance_weight: c.distance_weight,
            predator_period: c.predator_period,
        }
    }
}

impl PreyBlock {
    pub fn to_core(&self) -> PredatorPreyConfig {
        PredatorPreyConfig {
            n_predators: self.n_predators,
            size: self.size,
            horizon: self.horizon,
            vision: self.vision,
            capture_radius: self.capture_radius,
            predators_to_capture: self.predators_to_capture,
            capture_threshold: self.capture_threshold,
            capture_reward: self.capture_reward,
            distance_weight: self.distance_weight,
            predator_period: self.predator_period,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayBlock {
    pub n_agents: usize,
    pub n_goals: usize,
    pub horizon: usize,
    pub win_threshold: usize,
    pub sources: usize,
    pub noise: f64,
    pub fixed_roles: bool,
}

impl Default for RelayBlock {
    fn default() -> Self {
        let c = RelayConfig::default();
        Self {
            n_agents: c.n_agents,
            n_goals: c.n_goals,
            horizon: c.horizon,
            win_threshold: c.win_threshold,
            sources: c.sources,
            noise: c.noise,
            fixed_roles: c.fixed_roles,
        }
    }
}

impl RelayBlock {
    pub fn to_core(&self) -> RelayConfig {
        RelayConfig {
            n_agents: self.n_agents,
            n_goals: self.n_goals,
            horizon: self.horizon,
            win_threshold: self.win_threshold,
            sources: self.sources,
            noise: self.noise,
            fixed_roles: self.fixed_roles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonBlock {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonBlock {
    fn default() -> Self {
        let e = EpsilonSchedule::default();
        Self {
            start: e.start,
            end: e.end,
            fraction: e.fraction,
        }
    }
}

impl EpsilonBlock {
    fn to_core(self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.start,
            end: self.end,
            fraction: self.fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommBlock {
    Learned,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeamBlock {
    pub episodes: usize,
    pub comm: CommBlock,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonBlock,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub train_every: usize,
    pub target_period: u64,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub shaping: f64,
    pub comm_cost: f64,
    pub cp_hidden: Vec<usize>,
    pub cp_learning_rate: f64,
    pub cp_gamma: f64,
    pub cp_entropy: f64,
    pub cp_batch_episodes: usize,
    pub cp_warmup: f64,
}

impl Default for TeamBlock {
    fn default() -> Self {
        let c = TeamConfig::default();
        Self {
            episodes: 2000,
            comm: CommBlock::Learned,
            hidden: c.hidden,
            learning_rate: c.learning_rate,
            gamma: c.gamma,
            epsilon: EpsilonBlock::default(),
            buffer_capacity: c.buffer_capacity,
            batch_size: c.batch_size,
            train_every: c.train_every,
            target_period: c.target_period,
            grad_clip: c.grad_clip.unwrap_or(0.0),
            shaping: c.shaping,
            comm_cost: c.comm_cost,
            cp_hidden: c.cp_hidden,
            cp_learning_rate: c.cp_learning_rate,
            cp_gamma: c.cp_gamma,
            cp_entropy: c.cp_entropy,
            cp_batch_episodes: c.cp_batch_episodes,
            cp_warmup: c.cp_warmup,
        }
    }
}

impl TeamBlock {
    pub fn to_core(&self) -> TeamConfig {
        TeamConfig {
            hidden: self.hidden.clone(),
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            epsilon: self.epsilon.to_core(),
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            train_every: self.train_every,
            target_period: self.target_period,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            shaping: self.shaping,
            comm_cost: self.comm_cost,
            cp_hidden: self.cp_hidden.clone(),
            cp_learning_rate: self.cp_learning_rate,
            cp_gamma: self.cp_gamma,
            cp_entropy: self.cp_entropy,
            cp_batch_episodes: self.cp_batch_episodes,
            cp_warmup: self.cp_warmup,
        }
    }

    pub fn comm_mode(&self) -> CommMode {
        match self.comm {
            CommBlock::Learned => CommMode::Learned,
            CommBlock::Always => CommMode::Always,
            CommBlock::Never => CommMode::Never,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphBlock {
    pub k: usize,
    pub embedding_dim: usize,
    pub min_weight: f64,
    pub radius: Option<f64>,
    pub fully_connected: bool,
    /// Ablation: replace every embedding with zeros.
    pub disable_embedding: bool,
}

impl Default for GraphBlock {
    fn default() -> Self {
        let g = GraphConfig::default();
        Self {
            k: g.k,
            embedding_dim: g.embedding_dim,
            min_weight: g.min_weight,
            radius: g.radius,
            fully_connected: g.fully_connected,
            disable_embedding: !g.enabled,
        }
    }
}

impl GraphBlock {
    pub fn to_core(self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            embedding_dim: self.embedding_dim,
            min_weight: self.min_weight,
            radius: self.radius,
            fully_connected: self.fully_connected,
            enabled: !self.disable_embedding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerBlock {
    Linear,
    Vdn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    Exactly,
    AtMost,
    Unlimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryBlock {
    pub episodes: usize,
    pub w1: f64,
    pub w2: f64,
    pub xi: f64,
    pub gamma: f64,
    pub epsilon: EpsilonBlock,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub target_period: u64,
    pub train_every: usize,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub mixer: MixerBlock,
    pub graph: GraphBlock,
    pub budget: usize,
    pub budget_mode: BudgetMode,
    /// Train under the deployment budget rather than channel by channel.
    pub budgeted_training: bool,
}

impl Default for AdversaryBlock {
    fn default() -> Self {
        let c = AdversaryConfig::default();
        Self {
            episodes: 1000,
            w1: c.w1,
            w2: c.w2,
            xi: c.xi,
            gamma: c.gamma,
            epsilon: EpsilonBlock::default(),
            buffer_capacity: c.buffer_capacity,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            hidden: c.hidden,
            target_period: c.target_period,
            train_every: c.train_every,
            grad_clip: c.grad_clip.unwrap_or(0.0),
            mixer: MixerBlock::Linear,
            graph: GraphBlock::default(),
            budget: 1,
            budget_mode: BudgetMode::Exactly,
            budgeted_training: c.budgeted_training,
        }
    }
}

impl AdversaryBlock {
    pub fn to_core(&self) -> AdversaryConfig {
        AdversaryConfig {
            w1: self.w1,
            w2: self.w2,
            xi: self.xi,
            gamma: self.gamma,
            epsilon: self.epsilon.to_core(),
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            hidden: self.hidden.clone(),
            target_period: self.target_period,
            train_every: self.train_every,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            mixer: match self.mixer {
                MixerBlock::Linear => MixerKind::Linear,
                MixerBlock::Vdn => MixerKind::Vdn,
            },
            graph: self.graph.to_core(),
            budget: match self.budget_mode {
                BudgetMode::Exactly => Budget::Exactly(self.budget),
                BudgetMode::AtMost => Budget::AtMost(self.budget),
                BudgetMode::Unlimited => Budget::Unlimited,
            },
            budgeted_training: self.budgeted_training,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainBlock {
    pub rounds: usize,
    pub adversary_episodes: usize,
    pub cp_episodes: usize,
    pub p_mask: f64,
    pub refresh: bool,
    pub joint_retrain: bool,
    pub metric_episodes: usize,
}

impl Default for RetrainBlock {
    fn default() -> Self {
        let s = RetrainSchedule::default();
        Self {
            rounds: s.rounds,
            adversary_episodes: s.adversary_episodes,
            cp_episodes: s.cp_episodes,
            p_mask: s.p_mask,
            refresh: s.refresh,
            joint_retrain: s.joint_retrain,
            metric_episodes: s.metric_episodes,
        }
    }
}

impl RetrainBlock {
    pub fn to_core(&self) -> RetrainSchedule {
        RetrainSchedule {
            rounds: self.rounds,
            adversary_episodes: self.adversary_episodes,
            cp_episodes: self.cp_episodes,
            p_mask: self.p_mask,
            refresh: self.refresh,
            joint_retrain: self.joint_retrain,
            metric_episodes: self.metric_episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackBlock {
    pub episodes: usize,
    pub channels: usize,
    pub codebook_size: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonBlock,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub train_every: usize,
    pub target_period: u64,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub graph: GraphBlock,
    pub codebook_episodes: usize,
    pub codebook_iterations: usize,
    pub codebook_step: f64,
    pub codebook_samples: usize,
    /// Independently seeded attackers; the strongest on held-out episodes
    /// is kept.
    pub restarts: usize,
    pub selection_episodes: usize,
}

impl Default for AttackBlock {
    fn default() -> Self {
        let c = AttackConfig::default();
        Self {
            episodes: 1000,
            channels: c.budget.channels,
            codebook_size: c.budget.codebook_size,
            hidden: c.hidden,
            learning_rate: c.learning_rate,
            gamma: c.gamma,
            epsilon: EpsilonBlock::default(),
            buffer_capacity: c.buffer_capacity,
            batch_size: c.batch_size,
            train_every: c.train_every,
            target_period: c.target_period,
            grad_clip: c.grad_clip.unwrap_or(0.0),
            graph: GraphBlock::default(),
            codebook_episodes: c.codebook_episodes,
            codebook_iterations: c.codebook_iterations,
            codebook_step: c.codebook_step,
            codebook_samples: c.codebook_samples,
            restarts: c.restarts,
            selection_episodes: c.selection_episodes,
        }
    }
}

impl AttackBlock {
    pub fn budget(&self) -> AttackBudget {
        AttackBudget {
            channels: self.channels,
            codebook_size: self.codebook_size,
        }
    }

    pub fn to_core(&self) -> AttackConfig {
        AttackConfig {
            budget: self.budget(),
            hidden: self.hidden.clone(),
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            epsilon: self.epsilon.to_core(),
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            train_every: self.train_every,
            target_period: self.target_period,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            graph: self.graph.to_core(),
            codebook_episodes: self.codebook_episodes,
            codebook_iterations: self.codebook_iterations,
            codebook_step: self.codebook_step,
            codebook_samples: self.codebook_samples,
            restarts: self.restarts,
            selection_episodes: self.selection_episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub episodes: usize,
    /// Offset mixed into the run seed so evaluation episodes differ from
    /// training episodes.
    pub seed_offset: u64,
    /// Write a line-delimited communication log per condition.
    pub write_logs: bool,
    /// Episodes per condition written out step by step.
    pub trace_episodes: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            episodes: 500,
            seed_offset: 0xE7A1,
            write_logs: false,
            trace_episodes: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies `section.key=value` overrides; values are parsed as TOML and
    /// fall back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, LabError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Table::try_from(self).map_err(|e| LabError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut doc, &path, value).map_err(|e| LabError::Config(format!("override `{o}`: {e}")))?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let check = |r: dmac_core::Result<()>| r.map_err(|e| LabError::Config(e.to_string()));
        check(self.team.to_core().validate())?;
        check(self.adversary.to_core().validate())?;
        check(self.retrain.to_core().validate())?;
        if self.eval.episodes == 0 {
            return Err(LabError::Config("eval.episodes must be positive".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), String> {
    match path {
        [] => Err("empty key".into()),
        [last] => {
            if !table.contains_key(*last) {
                // optional fields serialize as absent; allow setting them
                table.insert((*last).to_string(), value);
            } else {
                table[*last] = value;
            }
            Ok(())
        }
        [head, rest @ ..] => match table.get_mut(*head) {
            Some(toml::Value::Table(t)) => set_path(t, rest, value),
            _ => Err(format!("unknown section `{head}`")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.env.kind = EnvKind::Prey;
        c.adversary.graph.radius = Some(2.5);
        c.attack.grad_clip = 0.0;
        c.team.hidden = vec![3, 5];
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[adversary]\nxii = 0.1").is_err());
        assert!(ExperimentConfig::from_toml_str("[env]\nkind = \"soccer\"").is_err());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = ExperimentConfig::default()
            .with_overrides(&["adversary.xi=0.5", "env.kind=relay", "adversary.graph.disable_embedding=true", "adversary.graph.radius=3.0", "seed=9"])
            .unwrap();
        assert_eq!(c.adversary.xi, 0.5);
        assert_eq!(c.env.kind, EnvKind::Relay);
        assert!(c.adversary.graph.disable_embedding);
        assert!(!c.adversary.to_core().graph.enabled);
        assert_eq!(c.adversary.graph.radius, Some(3.0));
        assert_eq!(c.seed, 9);
        assert!(ExperimentConfig::default().with_overrides(&["nokey"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["bogus.x=1"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["team.typo=1"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["team.episodes=many"]).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.retrain.p_mask = 1.5;
        assert!(matches!(c.validate(), Err(LabError::Config(_))));
        let mut c = ExperimentConfig::default();
        c.eval.episodes = 0;
        assert!(c.validate().is_err());
    }
}
