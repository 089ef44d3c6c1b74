use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, MlpSpec};
use crate::optim::Adam;

use super::incentive::{GaussianRewardHead, GiftActions, IncentiveNet};
use super::update::IncentiveOptimizer;
use super::{AgentError, CriticNet, PolicyNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Lio,
    LioDec,
    Pg,
    PgD,
    PgC,
    Ac,
    AcD,
    AcC,
    ExactLio,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 9] = [
        AlgorithmKind::Lio,
        AlgorithmKind::LioDec,
        AlgorithmKind::Pg,
        AlgorithmKind::PgD,
        AlgorithmKind::PgC,
        AlgorithmKind::Ac,
        AlgorithmKind::AcD,
        AlgorithmKind::AcC,
        AlgorithmKind::ExactLio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Lio => "lio",
            AlgorithmKind::LioDec => "lio-dec",
            AlgorithmKind::Pg => "pg",
            AlgorithmKind::PgD => "pg-d",
            AlgorithmKind::PgC => "pg-c",
            AlgorithmKind::Ac => "ac",
            AlgorithmKind::AcD => "ac-d",
            AlgorithmKind::AcC => "ac-c",
            AlgorithmKind::ExactLio => "exact-lio",
        }
    }

    pub fn learns_incentives(self) -> bool {
        matches!(self, AlgorithmKind::Lio | AlgorithmKind::LioDec)
    }

    pub fn actor_critic(self) -> bool {
        matches!(
            self,
            AlgorithmKind::Ac | AlgorithmKind::AcD | AlgorithmKind::AcC
        )
    }

    pub fn discrete_gifts(self) -> bool {
        matches!(self, AlgorithmKind::PgD | AlgorithmKind::AcD)
    }

    pub fn continuous_gifts(self) -> bool {
        matches!(self, AlgorithmKind::PgC | AlgorithmKind::AcC)
    }

    /// Whether the agent can reward others at all.
    pub fn gives(self) -> bool {
        self.learns_incentives() || self.discrete_gifts() || self.continuous_gifts()
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgorithmKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Linear exploration schedule `max(end, start - k (start - end) / div)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub div: f64,
}

impl EpsilonSchedule {
    pub fn at(&self, episode: u64) -> f64 {
        (self.start - episode as f64 * (self.start - self.end) / self.div).max(self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AlgorithmKind,
    /// Learn a critic and update the policy on one-step advantages even when
    /// the algorithm kind is not an actor-critic one.
    pub use_critic: bool,
    pub policy_hidden: Vec<usize>,
    pub incentive_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub lr_theta: f64,
    pub lr_eta: f64,
    /// Separate Adam rate for the incentive cost term; `None` folds the cost
    /// into the main incentive objective.
    pub lr_cost: Option<f64>,
    pub cost_coef: f64,
    pub lr_critic: f64,
    pub polyak: f64,
    pub entropy_coef: f64,
    pub epsilon: EpsilonSchedule,
    pub r_max: f64,
    /// Value of a discrete give-reward action.
    pub r_a: f64,
    /// Opponent-model refits (decentralized LIO): at most this many Adam
    /// steps per episode, stopping early once the mean log-likelihood
    /// changes by less than `opponent_fit_tol` per step. A single step per
    /// episode keeps the model a running estimate of the stochastic policy;
    /// fitting each short episode to convergence saturates it.
    pub opponent_fit_steps: usize,
    pub opponent_fit_lr: f64,
    pub opponent_fit_tol: f64,
    pub init_scale: f64,
    pub clip_norm: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AlgorithmKind::Lio,
            use_critic: false,
            policy_hidden: vec![64, 32],
            incentive_hidden: vec![64, 16],
            critic_hidden: vec![64, 64],
            activation: Activation::Relu,
            lr_theta: 1e-4,
            lr_eta: 1e-3,
            lr_cost: None,
            cost_coef: 0.0,
            lr_critic: 1e-3,
            polyak: 0.01,
            entropy_coef: 0.01,
            epsilon: EpsilonSchedule {
                start: 0.5,
                end: 0.05,
                div: 1000.0,
            },
            r_max: 2.0,
            r_a: 2.0,
            opponent_fit_steps: 1,
            opponent_fit_lr: 1e-2,
            opponent_fit_tol: 1e-4,
            init_scale: 0.1,
            clip_norm: 10.0,
        }
    }
}

/// Sizes an agent needs from its environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentShape {
    pub index: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_env_actions: usize,
    /// Encoding width of one other agent's action, for incentive inputs.
    pub action_code_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpponentModel {
    pub agent: usize,
    pub policy: PolicyNet,
    pub opt: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub index: usize,
    pub config: AgentConfig,
    pub policy: PolicyNet,
    pub incentive: Option<IncentiveNet>,
    pub incentive_opt: Option<IncentiveOptimizer>,
    pub reward_head: Option<GaussianRewardHead>,
    pub gift_actions: Option<GiftActions>,
    pub critic: Option<CriticNet>,
    pub opponent_models: Vec<OpponentModel>,
    pub version: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        shape: AgentShape,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let kind = config.kind;
        if kind == AlgorithmKind::ExactLio {
            return Err(AgentError::Contract(
                "exact-lio is a closed-form analysis, not a sampled agent".into(),
            ));
        }
        let n_others = shape.n_agents - 1;
        let gift_actions = kind.discrete_gifts().then_some(GiftActions {
            n_env_actions: shape.n_env_actions,
            n_others,
        });
        let n_out = gift_actions.map_or(shape.n_env_actions, |g| g.size());
        let mlp = |input: usize, hidden: &[usize], out: usize| {
            MlpSpec::new(input, hidden, out).with_activation(config.activation)
        };
        let policy = PolicyNet::new(
            mlp(shape.obs_dim, &config.policy_hidden, n_out),
            config.init_scale,
            rng,
        );
        let (incentive, incentive_opt) = if kind.learns_incentives() {
            let input = shape.obs_dim + n_others * shape.action_code_dim;
            let net = IncentiveNet::new(
                mlp(input, &config.incentive_hidden, shape.n_agents),
                config.r_max,
                shape.index,
                config.init_scale,
                rng,
            );
            let opt = IncentiveOptimizer::new(
                net.params.len(),
                config.lr_eta,
                config.cost_coef,
                config.lr_cost,
            );
            (Some(net), Some(opt))
        } else {
            (None, None)
        };
        let reward_head = kind.continuous_gifts().then(|| {
            GaussianRewardHead::new(
                mlp(shape.obs_dim, &config.policy_hidden, n_others),
                config.r_max,
                config.init_scale,
                rng,
            )
        });
        let critic = (kind.actor_critic() || config.use_critic).then(|| {
            CriticNet::new(
                mlp(shape.obs_dim, &config.critic_hidden, 1),
                config.init_scale,
                config.polyak,
                config.lr_critic,
                rng,
            )
        });
        let opponent_models = if kind == AlgorithmKind::LioDec {
            (0..shape.n_agents)
                .filter(|&j| j != shape.index)
                .map(|j| {
                    let policy = PolicyNet::new(policy.spec().clone(), config.init_scale, rng);
                    let opt = Adam::new(config.opponent_fit_lr, policy.params.len());
                    OpponentModel {
                        agent: j,
                        policy,
                        opt,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            index: shape.index,
            config,
            policy,
            incentive,
            incentive_opt,
            reward_head,
            gift_actions,
            critic,
            opponent_models,
            version: 0,
        })
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.config.kind
    }

    pub fn epsilon(&self, episode: u64) -> f64 {
        self.config.epsilon.at(episode)
    }

    /// Number of other agents this agent may reward.
    pub fn gift_slots(&self, n_agents: usize) -> usize {
        if self.kind().gives() {
            n_agents - 1
        } else {
            0
        }
    }

    pub fn uses_critic(&self) -> bool {
        self.critic.is_some()
    }

    pub fn opponent_model(&self, j: usize) -> Option<&OpponentModel> {
        self.opponent_models.iter().find(|m| m.agent == j)
    }

    pub fn is_finite(&self) -> bool {
        self.policy.params.is_finite()
            && self.incentive.as_ref().is_none_or(|n| n.params.is_finite())
            && self
                .reward_head
                .as_ref()
                .is_none_or(|h| h.params.is_finite())
            && self.critic.as_ref().is_none_or(|c| c.params.is_finite())
    }
}
