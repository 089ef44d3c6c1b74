//! Markov games: memory-1 iterated prisoner's dilemma, N-player Escape Room
//! (symmetric and asymmetric), and a small-grid Cleanup.
//!
//! Every environment is a single-owner state machine driven through [`Env`].
//! Observations are flat `f64` vectors so they can be fed straight into the
//! dense networks of [`crate::nn`].

mod cleanup;
mod escape_room;
mod ipd;
mod trace;

pub use cleanup::{Cell, Cleanup, CleanupAction, CleanupConfig};
pub use escape_room::{er_optimal_return, EscapeRoom, Position, ER_EPISODE_LEN};
pub use ipd::{ipd_payoff, Ipd, IpdAction, IpdState, IPD_EPISODE_LEN};
pub use trace::{read_trace, TraceRecord, TraceWriter};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent} chose action {action}, valid range is 0..{n_actions}")]
    InvalidAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("expected {expected} actions, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("step called on a finished episode")]
    Terminal,
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Per-agent bookkeeping emitted alongside rewards; used for classification
/// and the Cleanup probes.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentEvents {
    pub moved: bool,
    pub fired: bool,
    pub waste_cleared: u32,
    pub apples: u32,
    pub in_river: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub events: Vec<AgentEvents>,
}

pub trait Env: Send {
    fn n_agents(&self) -> usize;
    /// Number of discrete actions available to `agent`.
    fn n_actions(&self, agent: usize) -> usize;
    fn obs_dim(&self) -> usize;
    /// Width of the encoding of one other agent's action as seen by an
    /// incentive function.
    fn action_code_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;
    fn is_done(&self) -> bool;
    /// Encoding of one agent's action for incentive functions.
    fn encode_action(&self, agent: usize, action: usize) -> Vec<f64>;
    /// Canonical byte serialization of the full state, for hashing and traces.
    fn state_bytes(&self) -> Vec<u8>;

    /// Concatenated encodings of everyone's action except `giver`'s.
    fn others_actions(&self, giver: usize, actions: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.n_agents() - 1) * self.action_code_dim());
        for (j, &a) in actions.iter().enumerate() {
            if j != giver {
                out.extend(self.encode_action(j, a));
            }
        }
        out
    }

    fn state_hash(&self) -> String {
        let digest = Sha256::digest(self.state_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn check_actions(env: &dyn Env, actions: &[usize]) -> Result<(), EnvError> {
    if env.is_done() {
        return Err(EnvError::Terminal);
    }
    if actions.len() != env.n_agents() {
        return Err(EnvError::WrongArity {
            expected: env.n_agents(),
            got: actions.len(),
        });
    }
    for (agent, &action) in actions.iter().enumerate() {
        let n_actions = env.n_actions(agent);
        if action >= n_actions {
            return Err(EnvError::InvalidAction {
                agent,
                action,
                n_actions,
            });
        }
    }
    Ok(())
}

pub(crate) fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}
