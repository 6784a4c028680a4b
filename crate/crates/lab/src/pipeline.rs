//! The six pipeline stages, their artifacts and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dmac_core::adversary::{train_adversary, DeployedAdversary};
use dmac_core::attack::{train_strongest_attack, AttackerPolicy};
use dmac_core::comm::CommPolicy;
use dmac_core::env::prey::PredatorPrey;
use dmac_core::env::relay::RelayTask;
use dmac_core::env::traffic::TrafficJunction;
use dmac_core::env::Environment;
use dmac_core::eval::{evaluate_traced, Attack, FrequencySummary};
use dmac_core::retrain::retrain_cp;
use dmac_core::rng::derive_seed;
use dmac_core::team::{train_team, TeamPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{
    read_json, read_versioned, write_json, AdversaryCheckpoint, AttackerCheckpoint, RetrainedCheckpoint, TeamCheckpoint,
    FORMAT_VERSION,
};
use crate::config::{EnvKind, ExperimentConfig};
use crate::error::LabError;
use crate::heatmap::export_heatmap;
use crate::logs::{write_comm_log, write_csv, write_trace, AdversaryRow, AttackRow, CpRow, RoundRow, TeamRow};
use crate::report::Report;

pub const TEAM: &str = "team.json";
pub const ADVERSARY: &str = "adversary.json";
pub const RETRAINED: &str = "retrained.json";
pub const EVALUATION: &str = "evaluation.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainTeam,
    TrainAdversary,
    Retrain,
    TrainAttack,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::TrainTeam,
        Stage::TrainAdversary,
        Stage::Retrain,
        Stage::TrainAttack,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainTeam => "train-team",
            Stage::TrainAdversary => "train-adversary",
            Stage::Retrain => "retrain",
            Stage::TrainAttack => "train-attack",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// Which communication policy is under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Victim {
    /// The CP as trained alongside the team.
    Before,
    /// The CP after adversarial retraining.
    After,
}

impl Victim {
    pub fn name(self) -> &'static str {
        match self {
            Victim::Before => "before",
            Victim::After => "after",
        }
    }

    pub fn attacker_file(self) -> String {
        format!("attack_{}.json", self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub high: f64,
    pub low: f64,
    pub average: f64,
    pub sd: f64,
}

impl From<FrequencySummary> for SummaryRecord {
    fn from(s: FrequencySummary) -> Self {
        Self {
            high: s.high,
            low: s.low,
            average: s.average,
            sd: s.sd,
        }
    }
}

/// One evaluated (victim, condition) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub victim: Victim,
    pub condition: String,
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    pub masks: usize,
    pub perturbed: usize,
    pub summary: SummaryRecord,
    /// Heatmap file of the frequency matrix, relative to the output dir.
    pub heatmap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub version: u32,
    pub records: Vec<EvalRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub config_digest: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub version: u32,
    /// Digest of the configuration most recently executed.
    pub config_digest: String,
    pub seed: u64,
    /// Latest entry per stage, in pipeline order.
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, LabError> {
        let p = dir.join(MANIFEST);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(Self {
                version: FORMAT_VERSION,
                ..Self::default()
            })
        }
    }

    pub fn entry(&self, stage: Stage) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.stage == stage.name())
    }

    /// Checks that every listed artifact exists with the recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<(), LabError> {
        for e in &self.entries {
            for a in &e.artifacts {
                let p = dir.join(&a.path);
                let got = file_digest(&p)?;
                if got != a.sha256 {
                    return Err(LabError::Artifact {
                        path: p,
                        detail: format!("digest {got} does not match manifest {}", a.sha256),
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, LabError> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Stage seeds, split from the run seed so that stages can be re-run
/// independently.
pub mod seeds {
    use super::derive_seed;

    pub fn team(seed: u64) -> u64 {
        derive_seed(seed, 101)
    }
    pub fn adversary(seed: u64) -> u64 {
        derive_seed(seed, 202)
    }
    pub fn retrain(seed: u64) -> u64 {
        derive_seed(seed, 303)
    }
    pub fn attack(seed: u64, victim: super::Victim) -> u64 {
        derive_seed(seed, 404 + victim as u64)
    }
    /// Shared by every condition, so conditions are compared on the same
    /// episodes.
    pub fn eval(seed: u64, offset: u64) -> u64 {
        derive_seed(seed ^ offset, 505)
    }
}

/// An experiment bound to an output directory.
pub struct Lab {
    cfg: ExperimentConfig,
    dir: PathBuf,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self, LabError> {
        cfg.validate()?;
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        Ok(Self { cfg, dir })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_digest(&self) -> String {
        sha256_hex(self.cfg.to_toml_string().as_bytes())
    }

    /// Runs `stage` and records its artifacts in the manifest.
    pub fn run(&self, stage: Stage) -> Result<ManifestEntry, LabError> {
        let started = now();
        let files = match self.cfg.env.kind {
            EnvKind::Traffic => self.run_in(&TrafficJunction::new(self.cfg.env.traffic.to_core())?, stage)?,
            EnvKind::Prey => self.run_in(&PredatorPrey::new(self.cfg.env.prey.to_core())?, stage)?,
            EnvKind::Relay => self.run_in(&RelayTask::new(self.cfg.env.relay.to_core())?, stage)?,
        };
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            artifacts.push(ArtifactDigest {
                sha256: file_digest(&self.dir.join(&f))?,
                path: f,
            });
        }
        let entry = ManifestEntry {
            stage: stage.name().to_string(),
            config_digest: self.config_digest(),
            seed: self.cfg.seed,
            artifacts,
            started_unix: started,
            finished_unix: now(),
        };
        let mut manifest = RunManifest::load(&self.dir)?;
        manifest.version = FORMAT_VERSION;
        manifest.config_digest = entry.config_digest.clone();
        manifest.seed = self.cfg.seed;
        manifest.entries.retain(|e| e.stage != entry.stage);
        manifest.entries.push(entry.clone());
        manifest
            .entries
            .sort_by_key(|e| Stage::from_name(&e.stage).map(|s| s as usize).unwrap_or(usize::MAX));
        write_json(&self.dir.join(MANIFEST), &manifest)?;
        Ok(entry)
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<ManifestEntry>, LabError> {
        Stage::ALL.into_iter().map(|s| self.run(s)).collect()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, stage: Stage, file: &str, missing: Stage) -> Result<PathBuf, LabError> {
        let p = self.path(file);
        if p.exists() {
            Ok(p)
        } else {
            Err(LabError::Dependency {
                stage: stage.name(),
                missing: missing.name(),
                path: p,
            })
        }
    }

    pub fn load_team(&self, stage: Stage) -> Result<(TeamPolicy, CommPolicy), LabError> {
        let p = self.require(stage, TEAM, Stage::TrainTeam)?;
        Ok(read_versioned::<TeamCheckpoint>(&p)?.restore()?)
    }

    pub fn load_evaluation(&self) -> Result<Option<Evaluation>, LabError> {
        let p = self.path(EVALUATION);
        if p.exists() {
            Ok(Some(read_json(&p)?))
        } else {
            Ok(None)
        }
    }

    fn run_in<E: Environment>(&self, env: &E, stage: Stage) -> Result<Vec<String>, LabError> {
        let cfg = &self.cfg;
        let seed = cfg.seed;
        let mut files = Vec::new();
        let mut out = |name: &str| {
            files.push(name.to_string());
            self.path(name)
        };
        match stage {
            Stage::TrainTeam => {
                let t = train_team(
                    env,
                    &cfg.team.to_core(),
                    cfg.team.comm_mode(),
                    cfg.team.episodes,
                    seeds::team(seed),
                )?;
                write_json(&out(TEAM), &TeamCheckpoint::capture(&t.team, &t.cp))?;
                let rows: Vec<TeamRow> = t.curve.iter().map(TeamRow::from).collect();
                write_csv(&out("team_curve.csv"), &rows)?;
            }
            Stage::TrainAdversary => {
                let (team, cp) = self.load_team(stage)?;
                let acfg = cfg.adversary.to_core();
                let a = train_adversary(env, &team, &cp, &acfg, cfg.adversary.episodes, seeds::adversary(seed))?;
                write_json(
                    &out(ADVERSARY),
                    &AdversaryCheckpoint::capture(&a.policy, &a.critic, acfg.graph, acfg.budget),
                )?;
                let rows: Vec<AdversaryRow> = a.curve.iter().map(AdversaryRow::from).collect();
                write_csv(&out("adversary_curve.csv"), &rows)?;
            }
            Stage::Retrain => {
                let (team, cp) = self.load_team(stage)?;
                let adv: AdversaryCheckpoint =
                    read_versioned(&self.require(stage, ADVERSARY, Stage::TrainAdversary)?)?;
                let acfg = cfg.adversary.to_core();
                let r = retrain_cp(
                    env,
                    &team,
                    &cp,
                    (&adv.policy()?, &adv.critic()),
                    &acfg,
                    &cfg.team.to_core(),
                    &cfg.retrain.to_core(),
                    seeds::retrain(seed),
                )?;
                write_json(
                    &out(RETRAINED),
                    &RetrainedCheckpoint {
                        version: FORMAT_VERSION,
                        victim: TeamCheckpoint::capture(&r.team, &r.cp),
                        adversary: AdversaryCheckpoint::capture(&r.adversary, &r.critic, acfg.graph, acfg.budget),
                    },
                )?;
                for (k, round_cp) in r.round_cps.iter().enumerate() {
                    write_json(&out(&format!("retrain_round_{k}.json")), &TeamCheckpoint::capture(&r.team, round_cp))?;
                }
                let rows: Vec<CpRow> = r.curve.iter().map(CpRow::from).collect();
                write_csv(&out("retrain_curve.csv"), &rows)?;
                let rows: Vec<RoundRow> = r.rounds.iter().map(RoundRow::from).collect();
                write_csv(&out("retrain_rounds.csv"), &rows)?;
            }
            Stage::TrainAttack => {
                let mut victims = vec![(Victim::Before, self.load_team(stage)?)];
                if let Some(after) = self.load_retrained()? {
                    victims.push((Victim::After, (after.0, after.1)));
                }
                let acfg = cfg.attack.to_core();
                for (v, (team, cp)) in victims {
                    let (a, _) = train_strongest_attack(env, &team, &cp, &acfg, cfg.attack.episodes, seeds::attack(seed, v))?;
                    write_json(
                        &out(&v.attacker_file()),
                        &AttackerCheckpoint::capture(&a.attacker, cfg.attack.graph, cfg.attack.channels),
                    )?;
                    let rows: Vec<AttackRow> = a.curve.iter().map(AttackRow::from).collect();
                    write_csv(&out(&format!("attack_{}_curve.csv", v.name())), &rows)?;
                }
            }
            Stage::Evaluate => {
                let (team, cp) = self.load_team(stage)?;
                let before_adv = match self.path(ADVERSARY).exists() {
                    true => Some(read_versioned::<AdversaryCheckpoint>(&self.path(ADVERSARY))?.deployed()?),
                    false => None,
                };
                let mut victims = vec![(Victim::Before, team, cp, before_adv)];
                if let Some((t, c, a)) = self.load_retrained()? {
                    victims.push((Victim::After, t, c, Some(a)));
                }
                let mut records = Vec::new();
                for (v, team, cp, adv) in &victims {
                    let attacker = self.load_attacker(*v)?;
                    records.extend(self.evaluate_victim(env, *v, team, cp, adv.as_ref(), attacker.as_ref(), &mut out)?);
                }
                write_json(
                    &out(EVALUATION),
                    &Evaluation {
                        version: FORMAT_VERSION,
                        records,
                    },
                )?;
            }
            Stage::Report => {
                let records = self.load_evaluation()?.map(|e| e.records).unwrap_or_default();
                let report = Report::build(env.name(), seed, &records);
                write_json(&out("report.json"), &report)?;
                let p = out("report.md");
                std::fs::write(&p, report.to_markdown()).map_err(|e| LabError::io(&p, e))?;
            }
        }
        Ok(files)
    }

    fn load_retrained(&self) -> Result<Option<(TeamPolicy, CommPolicy, DeployedAdversary)>, LabError> {
        let p = self.path(RETRAINED);
        if !p.exists() {
            return Ok(None);
        }
        let r: RetrainedCheckpoint = read_versioned(&p)?;
        let (t, c) = r.victim.restore()?;
        Ok(Some((t, c, r.adversary.deployed()?)))
    }

    fn load_attacker(&self, v: Victim) -> Result<Option<(AttackerPolicy, AttackerCheckpoint)>, LabError> {
        let p = self.path(&v.attacker_file());
        if !p.exists() {
            return Ok(None);
        }
        let ck: AttackerCheckpoint = read_versioned(&p)?;
        Ok(Some((ck.restore()?, ck)))
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_victim<E: Environment>(
        &self,
        env: &E,
        victim: Victim,
        team: &TeamPolicy,
        cp: &CommPolicy,
        adversary: Option<&DeployedAdversary>,
        attacker: Option<&(AttackerPolicy, AttackerCheckpoint)>,
        out: &mut impl FnMut(&str) -> PathBuf,
    ) -> Result<Vec<EvalRecord>, LabError> {
        let cfg = &self.cfg;
        let mut attacks = vec![Attack::Clean, Attack::Heuristic(cfg.attack.budget())];
        if let Some((a, ck)) = attacker {
            attacks.push(Attack::Learned {
                attacker: a,
                graph: ck.graph.to_core(),
                channels: ck.channels,
            });
        }
        attacks.push(Attack::RandomMasker);
        attacks.push(Attack::RewardBased(cfg.adversary.graph.to_core()));
        if let Some(a) = adversary {
            attacks.push(Attack::Adversary(a));
        }
        let seed = seeds::eval(cfg.seed, cfg.eval.seed_offset);
        let mut records = Vec::with_capacity(attacks.len());
        for attack in attacks {
            let (r, log, trace) = evaluate_traced(env, team, cp, attack, cfg.eval.episodes, seed, cfg.eval.trace_episodes)?;
            let stem = format!("{}_{}", victim.name(), r.condition);
            let heatmap = format!("heatmap_{stem}.txt");
            export_heatmap(&r.frequency, &out(&heatmap))?;
            if cfg.eval.write_logs {
                write_comm_log(&out(&format!("comm_{stem}.jsonl")), &log)?;
            }
            if !trace.is_empty() {
                write_trace(&out(&format!("trace_{stem}.jsonl")), &trace)?;
            }
            records.push(EvalRecord {
                victim,
                condition: r.condition,
                episodes: r.episodes,
                wins: r.wins,
                win_rate: r.win_rate,
                mean_return: r.mean_return,
                masks: r.masks,
                perturbed: r.perturbed,
                summary: r.summary.into(),
                heatmap,
            });
        }
        Ok(records)
    }
}
