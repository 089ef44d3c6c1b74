//! Policy and incentive networks and their learning rules.
//!
//! * [`PolicyNet`]: softmax policy with an exploration floor.
//! * [`IncentiveNet`]: bounded rewards paid to other agents.
//! * [`update`]: policy-gradient steps, the incentive gradient taken through
//!   recipients' steps, opponent-model fitting.
//! * [`CriticNet`]: value function with a Polyak target for actor-critic.

mod agent;
mod checkpoint;
mod critic;
pub mod fixtures;
mod incentive;
pub mod policy;
mod trajectory;
pub mod update;

pub use agent::{Agent, AgentConfig, AgentShape, AlgorithmKind, EpsilonSchedule, OpponentModel};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use critic::CriticNet;
pub use incentive::{
    reward_log_density, squashed_log_density, GaussianRewardHead, GiftActions, IncentiveNet,
    RewardSample, U_CLAMP,
};
pub use policy::{mix, PolicyNet};
pub use trajectory::{discount_matrix, discounted_returns, Step, Trajectory};
pub use update::{
    build_lio_graph, fit_opponent_model, incentive_update, lio_extrinsic_gradient,
    lio_extrinsic_gradient_explicit, pg_weights, policy_step, policy_update, FitSettings,
    IncentiveOptimizer, IncentiveStepReport, RecipientUpdate, RecipientView, RewardMap,
    StepSettings,
};

use thiserror::Error;

use crate::diffcore::DiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("trajectory {trajectory} was generated by agent {agent} at version {found}, expected the updated version {expected}")]
    StaleTrajectory {
        trajectory: u64,
        agent: usize,
        found: u64,
        expected: u64,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(DiffError),
}
