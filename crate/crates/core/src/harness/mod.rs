//! Experiment orchestration: configuration, the two-trajectory training loop
//! for incentive learners and the single-trajectory loop for baselines,
//! per-episode metrics, multi-seed runs, post-hoc agent classification and
//! Cleanup incentive probes.

mod analysis;
mod config;
mod io;
mod rollout;
mod run;

pub use analysis::{
    classify_agents, classify_cleanup, classify_escape_room, probe_incentives, AgentLabel,
    ProbeKind, ProbeResult, ScriptedProbe,
};
pub use config::{table_defaults, EnvSpec, ExperimentConfig, MapSize};
pub use io::{read_metrics, run_sweep, write_run, RunFiles};
pub use rollout::{observation_dim, rollout, RolloutContext};
pub use run::{
    build_agents, run_experiment, run_seed, EpisodeRecord, EvalRecord, MetricsLog, RunOutput,
};

use thiserror::Error;

use crate::agents::AgentError;
use crate::envs::EnvError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("run diverged at episode {episode}: {detail}")]
    Diverged { episode: u64, detail: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status: 1 for configuration and input problems, 2 for
    /// numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Diverged { .. } => 2,
            _ => 1,
        }
    }
}
