//! End-of-training analysis: role labels and Cleanup incentive probes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::envs::{Cell, Cleanup, CleanupAction, CleanupConfig, Env, EscapeRoom, Position};

use super::rollout::{rollout, RolloutContext};
use super::{EnvSpec, ExperimentConfig, HarnessError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentLabel {
    Cooperator,
    Winner,
    Cleaner,
    Harvester,
    Undetermined,
}

/// Escape Room role: agents that favor the lever are Cooperators, those
/// that favor the door Winners. Takes probabilities or visit counts.
pub fn classify_escape_room(p_lever: f64, p_door: f64) -> AgentLabel {
    if p_lever > p_door {
        AgentLabel::Cooperator
    } else if p_door > p_lever {
        AgentLabel::Winner
    } else {
        AgentLabel::Undetermined
    }
}

/// Cleanup role from evaluation counts: steps on which the agent cleared
/// waste against steps on which it picked an apple.
pub fn classify_cleanup(cleaning_steps: u64, harvesting_steps: u64) -> AgentLabel {
    if cleaning_steps > harvesting_steps {
        AgentLabel::Cleaner
    } else if harvesting_steps > cleaning_steps {
        AgentLabel::Harvester
    } else {
        AgentLabel::Undetermined
    }
}

/// Labels every agent of a finished run from greedy evaluation episodes.
/// Escape Room agents are compared by how often they head for the lever
/// against the door, Cleanup agents by cleaning against harvesting steps.
/// Games without roles get an empty list.
pub fn classify_agents(
    cfg: &ExperimentConfig,
    agents: &[Agent],
    seed: u64,
) -> Result<Vec<AgentLabel>, HarnessError> {
    let room = match cfg.env {
        EnvSpec::EscapeRoom { n, m } => Some(EscapeRoom::new(n, m)?),
        EnvSpec::EscapeRoomAsym => Some(EscapeRoom::asymmetric()),
        EnvSpec::Cleanup { .. } => None,
        EnvSpec::Ipd => return Ok(Vec::new()),
    };
    let mut env = cfg.env.build(seed ^ 0x5eed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    let n = agents.len();
    let mut first = vec![0u64; n];
    let mut second = vec![0u64; n];
    let ctx = RolloutContext {
        observe_given: room.is_some(),
        episode: cfg.episodes,
        explore: false,
    };
    for k in 0..cfg.eval_episodes.max(1) {
        let tau = rollout(env.as_mut(), agents, u64::MAX - k as u64, ctx, &mut rng)?;
        for s in &tau.steps {
            for j in 0..n {
                match &room {
                    Some(r) => {
                        let target = r.target(j, s.env_actions[j]);
                        first[j] += u64::from(target == Position::Lever);
                        second[j] += u64::from(target == Position::Door);
                    }
                    None => {
                        first[j] += u64::from(s.events[j].waste_cleared > 0);
                        second[j] += u64::from(s.events[j].apples > 0);
                    }
                }
            }
        }
    }
    Ok((0..n)
        .map(|j| match room {
            Some(_) => classify_escape_room(first[j] as f64, second[j] as f64),
            None => classify_cleanup(first[j], second[j]),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    /// Walks up and down the river without cleaning.
    R,
    /// Seeks out waste and cleans it.
    C,
    /// Stands in the apple patch firing the beam at nothing.
    M,
}

#[derive(Clone, Debug)]
pub struct ScriptedProbe {
    pub kind: ProbeKind,
    heading_down: bool,
}

impl ScriptedProbe {
    pub fn new(kind: ProbeKind) -> Self {
        Self {
            kind,
            heading_down: true,
        }
    }

    pub fn act(&mut self, env: &Cleanup, agent: usize) -> usize {
        let (r, c) = env.agent_position(agent);
        let cfg = env.config();
        let step = |a: CleanupAction| a as usize;
        match self.kind {
            ProbeKind::R => {
                if !env.is_river(c) {
                    return step(CleanupAction::Left);
                }
                if r == 0 {
                    self.heading_down = true;
                } else if r + 1 == cfg.height {
                    self.heading_down = false;
                }
                step(if self.heading_down {
                    CleanupAction::Down
                } else {
                    CleanupAction::Up
                })
            }
            ProbeKind::M => {
                if env.is_apple_patch(c) {
                    step(CleanupAction::Clean)
                } else {
                    step(CleanupAction::Right)
                }
            }
            ProbeKind::C => {
                if env
                    .beam_footprint((r, c))
                    .iter()
                    .any(|&(wr, wc)| env.cell(wr, wc) == Cell::Waste)
                {
                    return step(CleanupAction::Clean);
                }
                // waste in the bottom row is out of reach of an upward beam
                let target = (0..cfg.height - 1)
                    .flat_map(|wr| (0..cfg.river_width).map(move |wc| (wr, wc)))
                    .filter(|&(wr, wc)| env.cell(wr, wc) == Cell::Waste)
                    .min_by_key(|&(wr, wc)| (wr + 1).abs_diff(r) + wc.abs_diff(c));
                let Some((wr, wc)) = target else {
                    return step(if env.is_river(c) {
                        CleanupAction::Stay
                    } else {
                        CleanupAction::Left
                    });
                };
                if wr >= r {
                    step(CleanupAction::Down)
                } else if wc + 1 < c {
                    step(CleanupAction::Left)
                } else if c + 1 < wc {
                    step(CleanupAction::Right)
                } else {
                    step(CleanupAction::Up)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    /// Incentive given to the probe per episode.
    pub per_episode: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Plays the incentive learner `giver` against each scripted probe in
/// Cleanup for `episodes` episodes and aggregates what it pays the probe.
pub fn probe_incentives(
    giver: &Agent,
    cfg: &CleanupConfig,
    probes: &[ProbeKind],
    episodes: usize,
    seed: u64,
) -> Result<Vec<ProbeResult>, HarnessError> {
    let net = giver
        .incentive
        .as_ref()
        .ok_or_else(|| HarnessError::Config {
            field: "checkpoint".into(),
            message: format!("agent {} has no incentive function to probe", giver.index),
        })?;
    if cfg.n_agents != 2 {
        return Err(HarnessError::Config {
            field: "env".into(),
            message: "probes use two-agent Cleanup".into(),
        });
    }
    let me = giver.index;
    let other = 1 - me;
    let eps = giver.config.epsilon.end;
    let mut out = Vec::new();
    for (k, &kind) in probes.iter().enumerate() {
        let mut env = Cleanup::new(cfg.clone(), seed.wrapping_add(k as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1));
        let mut per_episode = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut probe = ScriptedProbe::new(kind);
            let mut obs = env.reset();
            let mut total = 0.0;
            while !env.is_done() {
                let mut actions = vec![0; 2];
                actions[me] = giver.policy.act(&obs[me], eps, &mut rng);
                actions[other] = probe.act(&env, other);
                let result = env.step(&actions)?;
                let mut input = obs[me].clone();
                input.extend(env.others_actions(me, &actions));
                total += net.incentivize(&input)[other];
                obs = result.observations;
            }
            per_episode.push(total);
        }
        let (mean, stderr) = mean_stderr(&per_episode);
        out.push(ProbeResult {
            kind,
            per_episode,
            mean,
            stderr,
        });
    }
    Ok(out)
}
