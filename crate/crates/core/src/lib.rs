//! Learning to incentivize other learning agents.
//!
//! Each agent owns a policy and an incentive function that pays other
//! agents. Incentive parameters are trained by differentiating the giver's
//! extrinsic return, measured on a fresh episode, back through the
//! recipients' policy-gradient updates.
//!
//! * [`diffcore`]: reverse-mode differentiation with update-step expressions.
//! * [`envs`]: iterated prisoner's dilemma, Escape Room, Cleanup.
//! * [`agents`]: networks, learning rules, baselines, opponent models.
//! * [`exact_ipd`]: closed-form learning dynamics in the IPD.
//! * [`harness`]: experiment loop, configs, metrics, analysis, CLI.
//! * [`nn`], [`optim`]: dense networks over flat parameters, optimizers.

pub mod agents;
pub mod diffcore;
pub mod envs;
pub mod exact_ipd;
pub mod harness;
pub mod nn;
pub mod optim;
