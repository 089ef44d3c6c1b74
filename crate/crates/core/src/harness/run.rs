//! Training loops and per-episode metrics.
//!
//! With an incentive learner present, every iteration samples a trajectory
//! under the current policies, takes every agent's policy step on it, samples
//! a follow-up trajectory under the updated policies, and only then updates
//! the incentive functions on the pair. Without one, each iteration is a
//! single trajectory followed by the policy steps.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    discounted_returns, fit_opponent_model, incentive_update, policy_step, Agent, AgentError,
    AgentShape, AlgorithmKind, FitSettings, RecipientUpdate, RecipientView, RewardMap,
    StepSettings, Trajectory,
};
use crate::envs::{ipd_payoff, Env, IPD_EPISODE_LEN};
use crate::exact_ipd::{exact_incentive_step, exact_policy_step, joint_distribution, ExactState};
use crate::nn::{clip_global_norm, MlpSpec};

use super::analysis::{classify_agents, AgentLabel};
use super::rollout::{observation_dim, rollout, RolloutContext};
use super::{ExperimentConfig, HarnessError};

/// Metrics of one training iteration, taken from its first trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub run: String,
    pub seed: u64,
    pub episode: u64,
    pub trajectory: u64,
    pub policy_versions: Vec<u64>,
    /// Follow-up trajectory consumed by this iteration's incentive update.
    pub follow_up: Option<u64>,
    pub follow_up_versions: Option<Vec<u64>>,
    pub steps: usize,
    pub collective_return: f64,
    /// Extrinsic return per agent.
    pub returns: Vec<f64>,
    pub received: Vec<f64>,
    pub given: Vec<f64>,
    /// `action_counts[j][a]`: steps on which agent `j` took environment
    /// action `a`.
    pub action_counts: Vec<Vec<u32>>,
    /// `received_by_action[j][a]`: incentives and gifts agent `j` received on
    /// those steps.
    pub received_by_action: Vec<Vec<f64>>,
    pub waste_cleared: Vec<u32>,
    pub apples: Vec<u32>,
    pub epsilon: Vec<f64>,
    pub incentive_loss: Vec<Option<f64>>,
}

impl EpisodeRecord {
    pub fn per_step_collective(&self) -> f64 {
        self.collective_return / self.steps.max(1) as f64
    }
}

/// Greedy evaluation after `episode` training iterations, averaged over
/// the evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: u64,
    pub episodes: usize,
    pub collective_return: f64,
    pub returns: Vec<f64>,
    pub steps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub run: String,
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub labels: Vec<AgentLabel>,
    pub failure: Option<String>,
}

impl MetricsLog {
    /// Mean of `f` over the last `k` records.
    pub fn tail_mean(&self, k: usize, f: impl Fn(&EpisodeRecord) -> f64) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(k)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(f).sum::<f64>() / tail.len() as f64
    }

    /// Mean collective return of the last `k` evaluations.
    pub fn eval_tail(&self, k: usize) -> f64 {
        let tail = &self.evals[self.evals.len().saturating_sub(k)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|e| e.collective_return).sum::<f64>() / tail.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub agents: Vec<Agent>,
    pub shapes: Vec<AgentShape>,
    /// Agents as they were after each multiple of `checkpoint_every`.
    pub snapshots: Vec<(u64, Vec<Agent>)>,
    pub exact: Option<ExactState>,
}

fn step_settings(a: &Agent) -> StepSettings {
    StepSettings {
        lr: a.config.lr_theta,
        entropy_coef: a.config.entropy_coef,
        clip_norm: a.config.clip_norm,
    }
}

fn diverged(episode: u64) -> impl Fn(AgentError) -> HarnessError {
    move |e| match e {
        AgentError::NonFinite(d) => HarnessError::Diverged { episode, detail: d },
        other => HarnessError::Agent(other),
    }
}

/// Policy step of `agent` on its own total rewards, together with the
/// reward-head and critic steps that share the same weights.
fn own_update(
    agent: &mut Agent,
    tau: &Trajectory,
    gamma: f64,
) -> Result<RecipientUpdate, AgentError> {
    let j = agent.index;
    let rewards = tau.total_rewards(j);
    let (weights, map) = match &agent.critic {
        Some(c) => (c.advantages(tau, j, &rewards, gamma), RewardMap::Identity),
        None => (
            discounted_returns(&rewards, &tau.dones(), gamma),
            RewardMap::Discounted(gamma),
        ),
    };
    let settings = step_settings(agent);
    let up = policy_step(
        agent.policy.spec(),
        &agent.policy.params.values,
        tau,
        j,
        weights.clone(),
        map,
        settings,
        agent.version,
    )?;
    if let Some(head) = agent.reward_head.as_mut() {
        let obs: Vec<Vec<f64>> = tau.steps.iter().map(|s| s.obs[j].clone()).collect();
        let samples: Vec<Vec<f64>> = tau
            .steps
            .iter()
            .map(|s| s.reward_samples[j].clone())
            .collect();
        let mut g = head.weighted_score(&obs, &samples, &weights);
        clip_global_norm(&mut g, settings.clip_norm);
        for (p, d) in head.params.values.iter_mut().zip(&g) {
            *p += settings.lr * d;
        }
    }
    if let Some(c) = agent.critic.as_mut() {
        c.td_step(tau, j, &rewards, gamma);
        c.polyak();
    }
    Ok(up)
}

/// Step a decentralized giver attributes to recipient `j`: its fitted model
/// of `j`, updated on `j`'s rewards in `tau`.
fn modeled_update(
    giver: &mut Agent,
    tau: &Trajectory,
    j: usize,
    gamma: f64,
) -> Result<RecipientUpdate, AgentError> {
    let fit = FitSettings {
        steps: giver.config.opponent_fit_steps,
        lr: giver.config.opponent_fit_lr,
        tol: giver.config.opponent_fit_tol,
    };
    let settings = step_settings(giver);
    let model = giver
        .opponent_models
        .iter_mut()
        .find(|m| m.agent == j)
        .ok_or_else(|| {
            AgentError::Contract(format!("agent {} has no model of agent {j}", giver.index))
        })?;
    fit_opponent_model(
        &mut model.policy,
        &mut model.opt,
        tau,
        j,
        tau.epsilons[j],
        fit,
    )?;
    let weights = discounted_returns(&tau.total_rewards(j), &tau.dones(), gamma);
    let map = RewardMap::Discounted(gamma);
    policy_step(
        model.policy.spec(),
        &model.policy.params.values,
        tau,
        j,
        weights,
        map,
        settings,
        tau.policy_versions[j],
    )
}

fn record(
    cfg: &ExperimentConfig,
    seed: u64,
    episode: u64,
    tau: &Trajectory,
    n_env_actions: &[usize],
) -> EpisodeRecord {
    let n = tau.n_agents();
    let mut rec = EpisodeRecord {
        run: cfg.name.clone(),
        seed,
        episode,
        trajectory: tau.id,
        policy_versions: tau.policy_versions.clone(),
        follow_up: None,
        follow_up_versions: None,
        steps: tau.len(),
        collective_return: 0.0,
        returns: vec![0.0; n],
        received: vec![0.0; n],
        given: vec![0.0; n],
        action_counts: n_env_actions.iter().map(|&k| vec![0; k]).collect(),
        received_by_action: n_env_actions.iter().map(|&k| vec![0.0; k]).collect(),
        waste_cleared: vec![0; n],
        apples: vec![0; n],
        epsilon: tau.epsilons.clone(),
        incentive_loss: vec![None; n],
    };
    for s in &tau.steps {
        for j in 0..n {
            rec.returns[j] += s.env_rewards[j];
            let got: f64 = (0..n).map(|i| s.incentives[i][j] + s.gifts[i][j]).sum();
            rec.received[j] += got;
            rec.given[j] += s.incentives[j].iter().chain(&s.gifts[j]).sum::<f64>();
            let a = s.env_actions[j];
            rec.action_counts[j][a] += 1;
            rec.received_by_action[j][a] += got;
            rec.waste_cleared[j] += s.events[j].waste_cleared;
            rec.apples[j] += s.events[j].apples;
        }
    }
    rec.collective_return = rec.returns.iter().sum();
    rec
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Separate generator streams for initialization, acting and environment
/// randomness within one seed.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng, u64) {
    (
        stream(seed, 0),
        stream(seed, 1),
        rand::Rng::gen(&mut stream(seed, 2)),
    )
}

/// Plays `k` episodes without exploration and averages their returns.
fn evaluate(
    env: &mut dyn Env,
    agents: &[Agent],
    episode: u64,
    k: usize,
    observe_given: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EvalRecord, HarnessError> {
    let ctx = RolloutContext {
        observe_given,
        episode,
        explore: false,
    };
    let n = agents.len();
    let mut returns = vec![0.0; n];
    let mut steps = 0.0;
    for e in 0..k {
        let tau = rollout(env, agents, u64::MAX - e as u64, ctx, rng)?;
        for s in &tau.steps {
            for (r, x) in returns.iter_mut().zip(&s.env_rewards) {
                *r += x;
            }
        }
        steps += tau.len() as f64;
    }
    let k = k.max(1) as f64;
    returns.iter_mut().for_each(|r| *r /= k);
    Ok(EvalRecord {
        episode,
        episodes: k as usize,
        collective_return: returns.iter().sum(),
        returns,
        steps: steps / k,
    })
}

/// Builds the agents for `cfg` at `seed` without training them.
pub fn build_agents(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<Agent>, Vec<AgentShape>), HarnessError> {
    let (mut init, _, env_seed) = streams(seed);
    let env = cfg.env.build(env_seed)?;
    let observe_given = cfg.env.is_escape_room();
    let mut agents = Vec::new();
    let mut shapes = Vec::new();
    for (i, a) in cfg.agents.iter().enumerate() {
        let shape = AgentShape {
            index: i,
            n_agents: env.n_agents(),
            obs_dim: observation_dim(env.as_ref(), a.kind, observe_given),
            n_env_actions: env.n_actions(i),
            action_code_dim: env.action_code_dim(),
        };
        agents.push(Agent::new(a.clone(), shape, &mut init)?);
        shapes.push(shape);
    }
    Ok((agents, shapes))
}

/// Trains one seed of `cfg`. Divergence ends the run early and is recorded
/// in the returned log rather than returned as an error.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    if cfg.is_exact() {
        return Ok(run_exact(cfg, seed));
    }
    let (agents, shapes) = build_agents(cfg, seed)?;
    let (_, mut act_rng, env_seed) = streams(seed);
    let mut env = cfg.env.build(env_seed)?;
    let mut eval_rng = stream(seed, 3);
    let mut eval_env = cfg.env.build(rand::Rng::gen(&mut stream(seed, 4)))?;
    let mut out = RunOutput {
        log: MetricsLog {
            run: cfg.name.clone(),
            seed,
            ..Default::default()
        },
        agents,
        shapes,
        snapshots: Vec::new(),
        exact: None,
    };
    let n_env_actions: Vec<usize> = (0..env.n_agents()).map(|i| env.n_actions(i)).collect();
    let lio = out.agents.iter().any(|a| a.kind().learns_incentives());
    let specs: Vec<MlpSpec> = out.agents.iter().map(|a| a.policy.spec().clone()).collect();
    info!(
        "run {} seed {seed}: {} episodes, incentive learners: {lio}",
        cfg.name, cfg.episodes
    );
    for episode in 0..cfg.episodes {
        let ctx = RolloutContext {
            observe_given: cfg.env.is_escape_room(),
            episode,
            explore: true,
        };
        let step = (|| -> Result<EpisodeRecord, HarnessError> {
            let agents = &mut out.agents;
            let id = if lio { 2 * episode } else { episode };
            let tau = rollout(env.as_mut(), agents, id, ctx, &mut act_rng)?;
            let mut rec = record(cfg, seed, episode, &tau, &n_env_actions);
            let mut updates = Vec::with_capacity(agents.len());
            for a in agents.iter_mut() {
                updates.push(own_update(a, &tau, cfg.gamma).map_err(diverged(episode))?);
            }
            for (a, up) in agents.iter_mut().zip(&updates) {
                a.policy.params.values.clone_from(&up.updated);
                a.version += 1;
            }
            if lio {
                let tau_hat = rollout(env.as_mut(), agents, id + 1, ctx, &mut act_rng)?;
                rec.follow_up = Some(tau_hat.id);
                rec.follow_up_versions = Some(tau_hat.policy_versions.clone());
                for i in 0..agents.len() {
                    if !agents[i].kind().learns_incentives() {
                        continue;
                    }
                    let modeled: Vec<RecipientUpdate> = if agents[i].kind() == AlgorithmKind::LioDec
                    {
                        (0..agents.len())
                            .filter(|&j| j != i)
                            .map(|j| modeled_update(&mut agents[i], &tau, j, cfg.gamma))
                            .collect::<Result<_, _>>()
                            .map_err(diverged(episode))?
                    } else {
                        Vec::new()
                    };
                    let views: Vec<RecipientView> = if modeled.is_empty() {
                        (0..agents.len())
                            .filter(|&j| j != i)
                            .map(|j| RecipientView {
                                update: &updates[j],
                                spec: &specs[j],
                            })
                            .collect()
                    } else {
                        modeled
                            .iter()
                            .map(|u| RecipientView {
                                update: u,
                                spec: &specs[u.agent],
                            })
                            .collect()
                    };
                    let giver = &mut agents[i];
                    let clip = giver.config.clip_norm;
                    let (Some(net), Some(opt)) =
                        (giver.incentive.as_mut(), giver.incentive_opt.as_mut())
                    else {
                        continue;
                    };
                    let report =
                        incentive_update(i, net, opt, &tau, &views, &tau_hat, cfg.gamma, clip)
                            .map_err(diverged(episode))?;
                    rec.incentive_loss[i] = Some(report.extrinsic_loss);
                }
            }
            if let Some(a) = agents.iter().find(|a| !a.is_finite()) {
                return Err(HarnessError::Diverged {
                    episode,
                    detail: format!("non-finite parameters in agent {}", a.index),
                });
            }
            Ok(rec)
        })();
        match step {
            Ok(rec) => {
                let done = episode + 1;
                if episode % cfg.log_every == 0 || done == cfg.episodes {
                    out.log.records.push(rec);
                }
                if cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.episodes) {
                    let k = cfg.eval_episodes;
                    let ev = evaluate(
                        eval_env.as_mut(),
                        &out.agents,
                        done,
                        k,
                        cfg.env.is_escape_room(),
                        &mut eval_rng,
                    )?;
                    out.log.evals.push(ev);
                }
                if cfg.checkpoint_every > 0
                    && done % cfg.checkpoint_every == 0
                    && done < cfg.episodes
                {
                    out.snapshots.push((done, out.agents.clone()));
                }
            }
            Err(HarnessError::Diverged { episode, detail }) => {
                warn!(
                    "run {} seed {seed} diverged at episode {episode}: {detail}",
                    cfg.name
                );
                out.log.failure = Some(format!("diverged at episode {episode}: {detail}"));
                return Ok(out);
            }
            Err(e) => return Err(e),
        }
    }
    out.log.labels = classify_agents(cfg, &out.agents, seed)?;
    Ok(out)
}

/// Closed-form dynamics: each episode applies one simultaneous policy and
/// incentive step and records the expected extrinsic rewards of a
/// five-step episode under the current cooperation probabilities.
fn run_exact(cfg: &ExperimentConfig, seed: u64) -> RunOutput {
    let mut s = ExactState {
        theta: cfg.exact_theta,
        eta: cfg.exact_eta,
        alpha: cfg.agents[0].lr_theta,
        beta: cfg.agents[0].lr_eta,
        gamma: cfg.gamma,
    };
    let mut log = MetricsLog {
        run: cfg.name.clone(),
        seed,
        ..Default::default()
    };
    let len = IPD_EPISODE_LEN as f64;
    for episode in 0..cfg.episodes {
        let p = joint_distribution(s.theta);
        let mut returns = vec![0.0; 2];
        for (k, pk) in p.iter().enumerate() {
            let (r1, r2) = ipd_payoff(k / 2, k % 2);
            returns[0] += len * pk * r1;
            returns[1] += len * pk * r2;
        }
        if episode % cfg.log_every == 0 || episode + 1 == cfg.episodes {
            log.records.push(EpisodeRecord {
                run: cfg.name.clone(),
                seed,
                episode,
                trajectory: episode,
                policy_versions: vec![episode; 2],
                follow_up: None,
                follow_up_versions: None,
                steps: IPD_EPISODE_LEN,
                collective_return: returns.iter().sum(),
                returns,
                received: vec![0.0; 2],
                given: vec![0.0; 2],
                action_counts: vec![vec![0; 2]; 2],
                received_by_action: vec![vec![0.0; 2]; 2],
                waste_cleared: vec![0; 2],
                apples: vec![0; 2],
                epsilon: vec![0.0; 2],
                incentive_loss: vec![None; 2],
            });
        }
        let theta = exact_policy_step(&s);
        s.eta = exact_incentive_step(&s);
        s.theta = theta;
    }
    RunOutput {
        log,
        agents: Vec::new(),
        shapes: Vec::new(),
        snapshots: Vec::new(),
        exact: Some(s),
    }
}

/// Trains `cfg.seeds` consecutive seeds starting at `cfg.seed`, one after
/// another on the calling thread.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>, HarnessError> {
    (0..cfg.seeds as u64)
        .map(|k| run_seed(cfg, cfg.seed + k))
        .collect()
}
