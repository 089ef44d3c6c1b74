use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::envs::AgentEvents;

use super::AgentError;

/// One joint transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Policy inputs per agent.
    pub obs: Vec<Vec<f64>>,
    /// Policy action indices (for augmented baselines these encode gifts too).
    pub actions: Vec<usize>,
    /// Actions passed to the environment.
    pub env_actions: Vec<usize>,
    pub env_rewards: Vec<f64>,
    /// Learned incentives, `[giver][recipient]`, zero diagonal.
    pub incentives: Vec<Vec<f64>>,
    /// Reward-giving actions of augmented baselines, `[giver][recipient]`;
    /// unlike incentives these are charged to the giver.
    pub gifts: Vec<Vec<f64>>,
    /// Incentive-function input per giver (empty for agents without one).
    pub incentive_inputs: Vec<Vec<f64>>,
    /// Pre-squash Gaussian samples of continuous reward-giving heads.
    pub reward_samples: Vec<Vec<f64>>,
    pub total_rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
    pub events: Vec<AgentEvents>,
}

impl Step {
    /// `env + received incentives + received gifts - given gifts`.
    pub fn compute_totals(
        env_rewards: &[f64],
        incentives: &[Vec<f64>],
        gifts: &[Vec<f64>],
    ) -> Vec<f64> {
        let n = env_rewards.len();
        (0..n)
            .map(|j| {
                let mut r = env_rewards[j];
                for i in (0..n).filter(|&i| i != j) {
                    r += incentives[i][j] + gifts[i][j];
                }
                r - gifts[j]
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, g)| g)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Consecutive steps of one or more episodes collected under fixed
/// parameters. Episode boundaries are the `done` flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    /// Parameter version of each agent's policy when the data was generated.
    pub policy_versions: Vec<u64>,
    /// Exploration rate each agent acted with.
    pub epsilons: Vec<f64>,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(id: u64, policy_versions: Vec<u64>, epsilons: Vec<f64>) -> Self {
        Self {
            id,
            policy_versions,
            epsilons,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.policy_versions.len()
    }

    pub fn obs(&self, agent: usize) -> Tensor {
        Tensor::from_rows(
            &self
                .steps
                .iter()
                .map(|s| s.obs[agent].as_slice())
                .collect::<Vec<_>>(),
        )
    }

    pub fn next_obs(&self, agent: usize) -> Tensor {
        Tensor::from_rows(
            &self
                .steps
                .iter()
                .map(|s| s.next_obs[agent].as_slice())
                .collect::<Vec<_>>(),
        )
    }

    pub fn incentive_inputs(&self, giver: usize) -> Tensor {
        Tensor::from_rows(
            &self
                .steps
                .iter()
                .map(|s| s.incentive_inputs[giver].as_slice())
                .collect::<Vec<_>>(),
        )
    }

    pub fn actions(&self, agent: usize) -> Vec<usize> {
        self.steps.iter().map(|s| s.actions[agent]).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.done).collect()
    }

    pub fn env_rewards(&self, agent: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.env_rewards[agent]).collect()
    }

    pub fn total_rewards(&self, agent: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.total_rewards[agent]).collect()
    }

    /// Incentives `giver` paid `recipient` at each step.
    pub fn incentives(&self, giver: usize, recipient: usize) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.incentives[giver][recipient])
            .collect()
    }

    /// Within-episode time index of every step.
    pub fn time_indices(&self) -> Vec<usize> {
        let mut t = 0;
        self.steps
            .iter()
            .map(|s| {
                let k = t;
                t = if s.done { 0 } else { t + 1 };
                k
            })
            .collect()
    }

    pub fn episodes(&self) -> usize {
        let d = self.steps.iter().filter(|s| s.done).count();
        if self.steps.last().is_some_and(|s| !s.done) {
            d + 1
        } else {
            d
        }
    }

    /// Discounted incentive mass `sum_t gamma^t |r_eta|_1` emitted by `giver`.
    pub fn incentive_cost(&self, giver: usize, gamma: f64) -> f64 {
        self.steps
            .iter()
            .zip(self.time_indices())
            .map(|(s, t)| {
                gamma.powi(t as i32) * s.incentives[giver].iter().map(|x| x.abs()).sum::<f64>()
            })
            .sum()
    }

    /// Checks the reward bookkeeping identities of every step.
    pub fn check(&self) -> Result<(), AgentError> {
        let n = self.n_agents();
        if self.epsilons.len() != n {
            return Err(AgentError::Contract(
                "one exploration rate per agent is required".into(),
            ));
        }
        for (t, s) in self.steps.iter().enumerate() {
            if s.obs.len() != n
                || s.actions.len() != n
                || s.env_rewards.len() != n
                || s.incentives.len() != n
            {
                return Err(AgentError::Contract(format!(
                    "step {t} has inconsistent agent count"
                )));
            }
            for i in 0..n {
                if s.incentives[i][i] != 0.0 || s.gifts[i][i] != 0.0 {
                    return Err(AgentError::Contract(format!(
                        "step {t}: agent {i} rewards itself"
                    )));
                }
            }
            let expect = Step::compute_totals(&s.env_rewards, &s.incentives, &s.gifts);
            for j in 0..n {
                if (expect[j] - s.total_rewards[j]).abs() > 1e-9 {
                    return Err(AgentError::Contract(format!(
                        "step {t}: total reward of agent {j} does not add up"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `G_t = sum_{l >= t} gamma^{l - t} r_l`, restarting after each `done`.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// The `T x T` matrix `D` with `D r = discounted_returns(r)`.
pub fn discount_matrix(dones: &[bool], gamma: f64) -> Tensor {
    let n = dones.len();
    let mut d = Tensor::zeros(n, n);
    for t in 0..n {
        let mut c = 1.0;
        for l in t..n {
            d.data_mut()[t * n + l] = c;
            if dones[l] {
                break;
            }
            c *= gamma;
        }
    }
    d
}
