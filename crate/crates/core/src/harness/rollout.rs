//! Sampling one episode into a [`Trajectory`].

use rand::Rng;

use crate::agents::{Agent, AlgorithmKind, Step, Trajectory};
use crate::envs::Env;

use super::HarnessError;

/// Per-run facts the rollout needs beyond the agents themselves.
#[derive(Clone, Copy, Debug)]
pub struct RolloutContext {
    /// Append the incentives each agent has given to every other agent so far
    /// this episode to that agent's observation (Escape Room, givers only).
    pub observe_given: bool,
    pub episode: u64,
    /// Act with the exploration lower bound; off for evaluation.
    pub explore: bool,
}

/// Observation width for `agent` after any augmentation.
pub fn observation_dim(env: &dyn Env, kind: AlgorithmKind, observe_given: bool) -> usize {
    env.obs_dim()
        + if observe_given && kind.gives() {
            env.n_agents() - 1
        } else {
            0
        }
}

fn augment(
    raw: &[Vec<f64>],
    agents: &[Agent],
    given: &[Vec<f64>],
    ctx: RolloutContext,
) -> Vec<Vec<f64>> {
    raw.iter()
        .zip(agents)
        .enumerate()
        .map(|(i, (o, a))| {
            let mut o = o.clone();
            if ctx.observe_given && a.kind().gives() {
                o.extend(
                    given[i]
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, v)| *v),
                );
            }
            o
        })
        .collect()
}

/// Plays one episode. Each agent acts from its behavior policy at its own
/// exploration rate, or from its learned policy when `ctx.explore` is off; incentive learners pay out after observing the joint
/// action, gift-giving baselines pay out through their actions.
pub fn rollout<R: Rng + ?Sized>(
    env: &mut dyn Env,
    agents: &[Agent],
    id: u64,
    ctx: RolloutContext,
    rng: &mut R,
) -> Result<Trajectory, HarnessError> {
    let n = env.n_agents();
    let epsilons: Vec<f64> = agents
        .iter()
        .map(|a| {
            if ctx.explore {
                a.epsilon(ctx.episode)
            } else {
                0.0
            }
        })
        .collect();
    let mut tau = Trajectory::new(
        id,
        agents.iter().map(|a| a.version).collect(),
        epsilons.clone(),
    );
    let mut given = vec![vec![0.0; n]; n];
    let mut obs = augment(&env.reset(), agents, &given, ctx);
    loop {
        let mut actions = Vec::with_capacity(n);
        let mut env_actions = Vec::with_capacity(n);
        let mut gifts = vec![vec![0.0; n]; n];
        let mut reward_samples = vec![Vec::new(); n];
        for (i, agent) in agents.iter().enumerate() {
            let a = agent.policy.act(&obs[i], epsilons[i], rng);
            actions.push(a);
            match agent.gift_actions {
                Some(ga) => {
                    let (env_a, give) = ga.decode(a);
                    env_actions.push(env_a);
                    for (j, g) in (0..n).filter(|&j| j != i).zip(give) {
                        if g {
                            gifts[i][j] = agent.config.r_a;
                        }
                    }
                }
                None => env_actions.push(a),
            }
            if let Some(head) = &agent.reward_head {
                let s = head.sample(&obs[i], rng);
                for (j, r) in (0..n).filter(|&j| j != i).zip(&s.rewards) {
                    gifts[i][j] = *r;
                }
                reward_samples[i] = s.u;
            }
        }
        let result = env.step(&env_actions)?;
        let mut incentives = vec![vec![0.0; n]; n];
        let mut incentive_inputs = vec![Vec::new(); n];
        for (i, agent) in agents.iter().enumerate() {
            if let Some(net) = &agent.incentive {
                let mut input = obs[i].clone();
                input.extend(env.others_actions(i, &env_actions));
                incentives[i] = net.incentivize(&input);
                incentive_inputs[i] = input;
            }
        }
        for i in 0..n {
            for j in 0..n {
                given[i][j] += incentives[i][j] + gifts[i][j];
            }
        }
        let total_rewards = Step::compute_totals(&result.rewards, &incentives, &gifts);
        let next_obs = augment(&result.observations, agents, &given, ctx);
        tau.steps.push(Step {
            obs: std::mem::replace(&mut obs, next_obs.clone()),
            actions,
            env_actions,
            env_rewards: result.rewards,
            incentives,
            gifts,
            incentive_inputs,
            reward_samples,
            total_rewards,
            next_obs,
            done: result.done,
            events: result.events,
        });
        if result.done {
            break;
        }
    }
    Ok(tau)
}
