//! Adversarial retraining of the communication policy against a masking
//! adversary, with the team policy held fixed unless joint retraining is on.

use alloc::vec::Vec;

use crate::adversary::{continue_adversary, AdversaryConfig, DeployedAdversary, MixingCritic, MaskingPolicy};
use crate::comm::{apply_mask, train_cp_step, ChannelBits, CommPolicy, CpEpisode, CpStep, GateMode};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Attack};
use crate::nn::{OptimizerKind, OptimizerState};
use crate::replay::pack;
use crate::rng::{bernoulli, derive_seed, stream, stream_rng};
use crate::rollout::{communicate, episode_seed};
use crate::team::{shaped_reward, TeamConfig, TeamPolicy, TeamTransition, VdnTrainer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainSchedule {
    pub rounds: usize,
    pub adversary_episodes: usize,
    pub cp_episodes: usize,
    /// Per-step probability that the adversary's masks are applied.
    pub p_mask: f64,
    /// Continue training the adversary against the current CP each round.
    pub refresh: bool,
    /// Also update the team policy during retraining.
    pub joint_retrain: bool,
    /// Greedy episodes per condition for the per-round metrics; 0 skips them.
    pub metric_episodes: usize,
}

impl Default for RetrainSchedule {
    fn default() -> Self {
        Self {
            rounds: 3,
            adversary_episodes: 500,
            cp_episodes: 500,
            p_mask: 0.5,
            refresh: true,
            joint_retrain: false,
            metric_episodes: 100,
        }
    }
}

impl RetrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::InvalidConfig("p_mask must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Training episodes a full run consumes.
    pub fn episodes(&self) -> usize {
        let adv = if self.refresh { self.adversary_episodes } else { 0 };
        self.rounds * (adv + self.cp_episodes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpCurvePoint {
    pub episode: usize,
    pub team_return: f64,
    pub win: bool,
    /// Channel-steps opened by the gates.
    pub messages: usize,
    /// Steps on which the adversary's masks were applied.
    pub masked_steps: usize,
}

/// Trains `cp` with the frozen (or, given `joint`, jointly trained) team.
/// When `masker` is set, its masks are applied to each step with
/// probability `p_mask`, drawn from the mask stream.
#[allow(clippy::too_many_arguments)]
pub fn train_cp<E: Environment>(
    env: &E,
    team: &mut TeamPolicy,
    cp: &mut CommPolicy,
    optimizer: &mut OptimizerState,
    cfg: &TeamConfig,
    episodes: usize,
    masker: Option<(&DeployedAdversary, f64)>,
    mut joint: Option<&mut VdnTrainer>,
    seed: u64,
) -> Result<Vec<CpCurvePoint>> {
    let n = env.n_agents();
    let mut gates = stream_rng(seed, stream::GATES);
    let mut mask_rng = stream_rng(seed, stream::MASKS);
    let mut act_rng = stream_rng(seed, stream::EXPLORE);
    let mut batch: Vec<CpEpisode> = Vec::with_capacity(cfg.cp_batch_episodes);
    let mut curve = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut state = env.reset(episode_seed(seed, ep));
        let mut record = CpEpisode::default();
        let (mut ret, mut messages, mut masked_steps) = (0.0, 0usize, 0usize);
        let mut current = communicate(env, &state, cp, GateMode::Sampled, &mut gates)?;
        let win = loop {
            let mask = match masker {
                Some((adv, p)) if bernoulli(&mut mask_rng, p) => {
                    masked_steps += 1;
                    adv.mask(env, &state)?
                }
                _ => ChannelBits::zeros(n),
            };
            let delivered = apply_mask(&current.messages, &mask)?;
            let active = env.active(&state);
            let actions = team.act(&delivered, &active, 0.0, &mut act_rng)?;
            let out = env.step(&state, &actions)?;
            ret += out.team_reward;
            messages += current.decision.count();
            let terminal = out.is_terminal();
            let next = if terminal {
                None
            } else {
                Some(communicate(env, &out.state, cp, GateMode::Sampled, &mut gates)?)
            };
            if let Some(vdn) = joint.as_deref_mut() {
                vdn.push(TeamTransition {
                    inputs: pack(&team.inputs(&delivered).concat()),
                    actions: actions.iter().map(|&a| a as u8).collect(),
                    active,
                    reward: shaped_reward(env, cfg, &state, &out),
                    next_inputs: next
                        .as_ref()
                        .map(|c| pack(&team.inputs(&c.messages).concat()))
                        .unwrap_or_default(),
                    next_active: env.active(&out.state),
                    terminal,
                });
                vdn.update(team)?;
            }
            record.steps.push(CpStep {
                features: current.gate_features.clone(),
                gates: current.decision.clone(),
                masked: mask,
                reward: out.team_reward,
            });
            state = out.state;
            match next {
                Some(c) => current = c,
                None => break out.win.unwrap_or(false),
            }
        };
        batch.push(record);
        if batch.len() == cfg.cp_batch_episodes || ep + 1 == episodes {
            train_cp_step(cp, optimizer, &batch, cfg.comm_cost, cfg.cp_gamma, cfg.cp_entropy)?;
            batch.clear();
        }
        curve.push(CpCurvePoint {
            episode: ep,
            team_return: ret,
            win,
            messages,
            masked_steps,
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub clean_win_rate: f64,
    pub masked_win_rate: f64,
    pub frequency_sd: f64,
    pub mean_masked_steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainOutcome {
    pub cp: CommPolicy,
    pub team: TeamPolicy,
    pub adversary: MaskingPolicy,
    pub critic: MixingCritic,
    pub rounds: Vec<RoundMetrics>,
    pub curve: Vec<CpCurvePoint>,
    /// The CP at the end of each round.
    pub round_cps: Vec<CommPolicy>,
    /// Training episodes consumed across every round.
    pub episodes: usize,
}

/// Seed of the CP phase of round `r`.
pub fn round_cp_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, 2 * r as u64 + 1)
}

/// Seed of the adversary-refresh phase of round `r`.
pub fn round_adversary_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, 2 * r as u64)
}

/// Rounds of (optional) adversary refresh followed by CP training under the
/// adversary's greedy masks.
#[allow(clippy::too_many_arguments)]
pub fn retrain_cp<E: Environment>(
    env: &E,
    team: &TeamPolicy,
    cp: &CommPolicy,
    adversary: (&MaskingPolicy, &MixingCritic),
    adv_cfg: &AdversaryConfig,
    team_cfg: &TeamConfig,
    schedule: &RetrainSchedule,
    seed: u64,
) -> Result<RetrainOutcome> {
    schedule.validate()?;
    let mut team = team.clone();
    let mut cp = cp.clone();
    let (mut policy, mut critic) = (adversary.0.clone(), adversary.1.clone());
    let mut optimizer = OptimizerState::for_network(OptimizerKind::adam(), team_cfg.cp_learning_rate, cp.network());
    let mut vdn = schedule.joint_retrain.then(|| VdnTrainer::new(&team, team_cfg, seed));
    let mut rounds = Vec::with_capacity(schedule.rounds);
    let mut round_cps = Vec::with_capacity(schedule.rounds);
    let mut curve = Vec::new();
    let mut episodes = 0;
    for r in 0..schedule.rounds {
        if schedule.refresh && schedule.adversary_episodes > 0 {
            let out = continue_adversary(
                env,
                &team,
                &cp,
                adv_cfg,
                policy,
                critic,
                schedule.adversary_episodes,
                round_adversary_seed(seed, r),
            )?;
            policy = out.policy;
            critic = out.critic;
            episodes += schedule.adversary_episodes;
        }
        let deployed = DeployedAdversary {
            policy: policy.clone(),
            graph: adv_cfg.graph,
            budget: adv_cfg.budget,
        };
        let points = train_cp(
            env,
            &mut team,
            &mut cp,
            &mut optimizer,
            team_cfg,
            schedule.cp_episodes,
            Some((&deployed, schedule.p_mask)),
            vdn.as_mut(),
            round_cp_seed(seed, r),
        )?;
        episodes += schedule.cp_episodes;
        let mean_masked_steps = if points.is_empty() {
            0.0
        } else {
            points.iter().map(|p| p.masked_steps as f64).sum::<f64>() / points.len() as f64
        };
        curve.extend(points);
        let (clean_win_rate, masked_win_rate, frequency_sd) = if schedule.metric_episodes > 0 {
            let eval_seed = derive_seed(seed ^ 0x0E7A_1000, r as u64);
            let clean = evaluate(env, &team, &cp, Attack::Clean, schedule.metric_episodes, eval_seed)?;
            let masked = evaluate(env, &team, &cp, Attack::Adversary(&deployed), schedule.metric_episodes, eval_seed)?;
            (clean.win_rate, masked.win_rate, clean.summary.sd)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        round_cps.push(cp.clone());
        rounds.push(RoundMetrics {
            round: r,
            clean_win_rate,
            masked_win_rate,
            frequency_sd,
            mean_masked_steps,
        });
    }
    Ok(RetrainOutcome {
        cp,
        team,
        adversary: policy,
        critic,
        rounds,
        curve,
        round_cps,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::init_adversary;
    use crate::env::relay::{RelayConfig, RelayTask};
    use crate::team::init_team;
    use alloc::vec;

    fn setup() -> (RelayTask, TeamConfig, AdversaryConfig, TeamPolicy, CommPolicy) {
        let env = RelayTask::new(RelayConfig::default()).unwrap();
        let tc = TeamConfig {
            hidden: vec![8],
            cp_hidden: vec![8],
            cp_batch_episodes: 2,
            ..TeamConfig::default()
        };
        let ac = AdversaryConfig {
            hidden: vec![8],
            batch_size: 4,
            ..AdversaryConfig::default()
        };
        let (team, cp) = init_team(&env, &tc, 5).unwrap();
        (env, tc, ac, team, cp)
    }

    #[test]
    fn zero_rounds_return_cp_unchanged() {
        let (env, tc, ac, team, cp) = setup();
        let (p, c) = init_adversary(&env, &ac, 1).unwrap();
        let s = RetrainSchedule {
            rounds: 0,
            ..RetrainSchedule::default()
        };
        let out = retrain_cp(&env, &team, &cp, (&p, &c), &ac, &tc, &s, 3).unwrap();
        assert_eq!(out.cp, cp);
        assert_eq!(out.episodes, 0);
    }

    #[test]
    fn episode_accounting_and_frozen_team() {
        let (env, tc, ac, team, cp) = setup();
        let (p, c) = init_adversary(&env, &ac, 1).unwrap();
        let s = RetrainSchedule {
            rounds: 2,
            adversary_episodes: 3,
            cp_episodes: 5,
            metric_episodes: 2,
            ..RetrainSchedule::default()
        };
        let out = retrain_cp(&env, &team, &cp, (&p, &c), &ac, &tc, &s, 3).unwrap();
        assert_eq!(out.episodes, 2 * (3 + 5));
        assert_eq!(out.episodes, s.episodes());
        assert_eq!(out.curve.len(), 10);
        assert_eq!(out.rounds.len(), 2);
        assert_eq!(out.team, team);
        assert_ne!(out.cp, cp);
    }

    #[test]
    fn zero_mask_probability_is_plain_cp_training() {
        let (env, tc, ac, team, cp) = setup();
        let (p, c) = init_adversary(&env, &ac, 1).unwrap();
        let s = RetrainSchedule {
            rounds: 1,
            cp_episodes: 6,
            p_mask: 0.0,
            refresh: false,
            metric_episodes: 0,
            ..RetrainSchedule::default()
        };
        let out = retrain_cp(&env, &team, &cp, (&p, &c), &ac, &tc, &s, 3).unwrap();
        assert!(out.curve.iter().all(|pt| pt.masked_steps == 0));

        let mut plain = cp.clone();
        let mut t = team.clone();
        let mut opt = OptimizerState::for_network(OptimizerKind::adam(), tc.cp_learning_rate, plain.network());
        let curve = train_cp(&env, &mut t, &mut plain, &mut opt, &tc, 6, None, None, round_cp_seed(3, 0)).unwrap();
        assert_eq!(out.cp, plain);
        assert_eq!(out.curve, curve);
    }

    #[test]
    fn bad_mask_probability() {
        let s = RetrainSchedule {
            p_mask: 1.5,
            ..RetrainSchedule::default()
        };
        assert!(s.validate().is_err());
    }
}
