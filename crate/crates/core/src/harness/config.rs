//! Experiment configuration.
//!
//! Files are TOML. Top-level keys set run-wide options, `[env]` selects the
//! game, `[agents]` overrides fields for every agent and `[agent.<i>]` for
//! agent `i` alone. Each agent starts from the published defaults for its
//! algorithm in the chosen environment, so a file only lists what differs:
//!
//! ```toml
//! name = "er21"
//! episodes = 10000
//! seeds = 10
//!
//! [env]
//! kind = "escape-room"
//! n = 2
//! m = 1
//!
//! [agents]
//! kind = "lio"
//!
//! [agent.1]
//! kind = "pg"
//! lr_theta = 1e-3
//! ```
//!
//! Run-wide keys: `name`, `episodes`, `seed` (base seed), `seeds` (number of
//! independent runs), `gamma`, `log_every` (episodes between metric
//! records), `checkpoint_every` (0 disables intermediate checkpoints),
//! `eval_every` (episodes between greedy evaluations, 0 disables them),
//! `eval_episodes` (episodes per evaluation and for end-of-run role labels),
//! `exact_theta` and `exact_eta` (initial state for `exact-lio`). Agent keys are the fields of [`AgentConfig`].

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AlgorithmKind, EpsilonSchedule};
use crate::envs::{Cleanup, CleanupConfig, Env, EnvError, EscapeRoom, Ipd};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapSize {
    #[serde(rename = "7x7")]
    Small,
    #[serde(rename = "10x10")]
    Large,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Ipd,
    EscapeRoom {
        n: usize,
        m: usize,
    },
    EscapeRoomAsym,
    Cleanup {
        #[serde(default = "small_map")]
        map: MapSize,
        #[serde(default)]
        view_radius: Option<usize>,
    },
}

fn small_map() -> MapSize {
    MapSize::Small
}

impl EnvSpec {
    pub fn n_agents(&self) -> usize {
        match self {
            EnvSpec::Ipd | EnvSpec::EscapeRoomAsym | EnvSpec::Cleanup { .. } => 2,
            EnvSpec::EscapeRoom { n, .. } => *n,
        }
    }

    pub fn is_escape_room(&self) -> bool {
        matches!(self, EnvSpec::EscapeRoom { .. } | EnvSpec::EscapeRoomAsym)
    }

    pub fn cleanup_config(&self) -> Option<CleanupConfig> {
        match self {
            EnvSpec::Cleanup { map, view_radius } => {
                let mut cfg = match map {
                    MapSize::Small => CleanupConfig::small(),
                    MapSize::Large => CleanupConfig::large(),
                };
                cfg.view_radius = *view_radius;
                Some(cfg)
            }
            _ => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Env>, EnvError> {
        Ok(match self {
            EnvSpec::Ipd => Box::new(Ipd::new()),
            EnvSpec::EscapeRoom { n, m } => Box::new(EscapeRoom::new(*n, *m)?),
            EnvSpec::EscapeRoomAsym => Box::new(EscapeRoom::asymmetric()),
            EnvSpec::Cleanup { .. } => Box::new(Cleanup::new(
                self.cleanup_config().unwrap_or_else(CleanupConfig::small),
                seed,
            )?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvSpec,
    pub episodes: u64,
    pub seed: u64,
    pub seeds: usize,
    pub gamma: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub exact_theta: [f64; 2],
    pub exact_eta: [[f64; 2]; 2],
    pub agents: Vec<AgentConfig>,
}

const RUN_KEYS: [&str; 11] = [
    "name",
    "episodes",
    "seed",
    "seeds",
    "gamma",
    "log_every",
    "checkpoint_every",
    "eval_every",
    "eval_episodes",
    "exact_theta",
    "exact_eta",
];

fn default_episodes(env: &EnvSpec) -> u64 {
    match env {
        EnvSpec::Ipd => 60_000,
        _ => 10_000,
    }
}

fn eps(start: f64, end: f64, div: f64) -> EpsilonSchedule {
    EpsilonSchedule { start, end, div }
}

/// Published hyperparameters for `kind` in `env`.
pub fn table_defaults(env: &EnvSpec, kind: AlgorithmKind) -> AgentConfig {
    use AlgorithmKind::*;
    let base = AgentConfig {
        kind,
        ..AgentConfig::default()
    };
    match env {
        // exact-lio reads lr_theta and lr_eta as the closed-form step sizes
        EnvSpec::Ipd => {
            let lr = if kind == ExactLio { 0.01 } else { 1e-3 };
            AgentConfig {
                policy_hidden: vec![16, 8],
                incentive_hidden: vec![16, 8],
                entropy_coef: 0.1,
                lr_theta: lr,
                lr_eta: lr,
                cost_coef: 0.0,
                epsilon: eps(1.0, 0.01, 5000.0),
                r_max: 3.0,
                ..base
            }
        }
        EnvSpec::EscapeRoom { .. } | EnvSpec::EscapeRoomAsym => {
            let large = env.n_agents() >= 3;
            let (entropy_coef, epsilon, lr_theta) = match kind {
                Lio | LioDec => (0.01, eps(0.5, if large { 0.3 } else { 0.1 }, 1000.0), 1e-4),
                PgC | AcC => (0.1, eps(1.0, 0.1, 1000.0), 1e-3),
                _ => (0.01, eps(0.5, 0.05, 100.0), 1e-4),
            };
            AgentConfig {
                policy_hidden: vec![64, 32],
                incentive_hidden: vec![64, 16],
                entropy_coef,
                epsilon,
                lr_theta,
                lr_eta: 1e-3,
                cost_coef: 1.0,
                lr_cost: Some(1e-4),
                r_max: 2.0,
                r_a: 2.0,
                ..base
            }
        }
        EnvSpec::Cleanup { map, .. } => {
            let (div, lr_theta) = match (map, kind) {
                (MapSize::Small, Ac) => (100.0, 1e-3),
                (MapSize::Small, _) => (100.0, 1e-4),
                (MapSize::Large, Lio | LioDec) => (1000.0, 1e-4),
                (MapSize::Large, Ac) => (5000.0, 1e-3),
                (MapSize::Large, _) => (1000.0, 1e-3),
            };
            AgentConfig {
                use_critic: true,
                policy_hidden: vec![64, 64],
                incentive_hidden: vec![64, 64],
                critic_hidden: vec![64, 64],
                entropy_coef: 0.1,
                epsilon: eps(0.5, 0.05, div),
                lr_theta,
                lr_eta: 1e-3,
                lr_critic: 1e-3,
                cost_coef: 1e-4,
                r_max: 2.0,
                r_a: 2.0,
                ..base
            }
        }
    }
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn merge(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        into.insert(k.clone(), v.clone());
    }
}

fn parse_field<T: serde::de::DeserializeOwned>(
    table: &toml::Table,
    key: &str,
) -> Result<Option<T>, HarnessError> {
    table
        .get(key)
        .map(|v| {
            v.clone()
                .try_into::<T>()
                .map_err(|e| field_error(key, e.message().to_string()))
        })
        .transpose()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| field_error("<file>", e.message().to_string()))?;
        for key in table.keys() {
            if !RUN_KEYS.contains(&key.as_str())
                && !["env", "agents", "agent"].contains(&key.as_str())
            {
                return Err(field_error(key.clone(), "unknown key"));
            }
        }
        let env: EnvSpec = parse_field(&table, "env")?
            .ok_or_else(|| field_error("env", "missing environment section"))?;
        let n = env.n_agents();
        let shared = match table.get("agents") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(field_error("agents", "expected a table")),
            None => toml::Table::new(),
        };
        let per_agent = match table.get("agent") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(field_error("agent", "expected a table of per-agent tables")),
            None => toml::Table::new(),
        };
        for key in per_agent.keys() {
            if key.parse::<usize>().map_or(true, |i| i >= n) {
                return Err(field_error(
                    format!("agent.{key}"),
                    format!("agent index must be below {n}"),
                ));
            }
        }
        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let own = match per_agent.get(&i.to_string()) {
                Some(toml::Value::Table(t)) => t.clone(),
                Some(_) => return Err(field_error(format!("agent.{i}"), "expected a table")),
                None => toml::Table::new(),
            };
            let kind_value = own.get("kind").or_else(|| shared.get("kind")).cloned();
            let field = format!("agent.{i}.kind");
            let kind: AlgorithmKind = match kind_value {
                Some(v) => v
                    .try_into()
                    .map_err(|e: toml::de::Error| field_error(&field, e.message().to_string()))?,
                None => return Err(field_error(field, "no algorithm given for this agent")),
            };
            let defaults = table_defaults(&env, kind);
            let mut merged = toml::Table::try_from(&defaults)
                .map_err(|e| field_error(format!("agent.{i}"), e.to_string()))?;
            merge(&mut merged, &shared);
            merge(&mut merged, &own);
            let cfg: AgentConfig =
                toml::Value::Table(merged)
                    .try_into()
                    .map_err(|e: toml::de::Error| {
                        field_error(format!("agent.{i}"), e.message().to_string())
                    })?;
            agents.push(cfg);
        }
        let cfg = Self {
            name: parse_field(&table, "name")?.unwrap_or_else(|| "experiment".to_string()),
            episodes: parse_field(&table, "episodes")?.unwrap_or_else(|| default_episodes(&env)),
            seed: parse_field(&table, "seed")?.unwrap_or(0),
            seeds: parse_field(&table, "seeds")?.unwrap_or(1),
            gamma: parse_field(&table, "gamma")?.unwrap_or(0.99),
            log_every: parse_field(&table, "log_every")?.unwrap_or(1),
            checkpoint_every: parse_field(&table, "checkpoint_every")?.unwrap_or(0),
            eval_every: parse_field(&table, "eval_every")?.unwrap_or(100),
            eval_episodes: parse_field(&table, "eval_episodes")?.unwrap_or(20),
            exact_theta: parse_field(&table, "exact_theta")?.unwrap_or([0.5, 0.5]),
            exact_eta: parse_field(&table, "exact_eta")?.unwrap_or([[0.0; 2]; 2]),
            env,
            agents,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration with table defaults for the given per-agent algorithms.
    pub fn preset(name: &str, env: EnvSpec, kinds: &[AlgorithmKind]) -> Self {
        Self {
            name: name.to_string(),
            episodes: default_episodes(&env),
            seed: 0,
            seeds: 1,
            gamma: 0.99,
            log_every: 1,
            checkpoint_every: 0,
            eval_every: 100,
            eval_episodes: 20,
            exact_theta: [0.5, 0.5],
            exact_eta: [[0.0; 2]; 2],
            agents: kinds.iter().map(|&k| table_defaults(&env, k)).collect(),
            env,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.agents
            .iter()
            .any(|a| a.kind == AlgorithmKind::ExactLio)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let n = self.env.n_agents();
        if self.agents.len() != n {
            return Err(field_error(
                "agents",
                format!(
                    "environment has {n} agents, config lists {}",
                    self.agents.len()
                ),
            ));
        }
        if let EnvSpec::EscapeRoom { n, m } = self.env {
            if n < 2 || m == 0 || m >= n {
                return Err(field_error(
                    "env.m",
                    format!("need 0 < m < n, got n={n}, m={m}"),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(field_error("gamma", "must lie in [0, 1)"));
        }
        if self.episodes == 0 {
            return Err(field_error("episodes", "must be positive"));
        }
        if self.seeds == 0 {
            return Err(field_error("seeds", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(field_error("log_every", "must be positive"));
        }
        if self.is_exact() {
            if self.env != EnvSpec::Ipd
                || self
                    .agents
                    .iter()
                    .any(|a| a.kind != AlgorithmKind::ExactLio)
            {
                return Err(field_error(
                    "agents.kind",
                    "exact-lio needs every agent to be exact-lio in the ipd",
                ));
            }
            return Ok(());
        }
        let dec = self.agents.iter().any(|a| a.kind == AlgorithmKind::LioDec);
        for (i, a) in self.agents.iter().enumerate() {
            let f = |k: &str| format!("agent.{i}.{k}");
            for (k, v) in [
                ("lr_theta", a.lr_theta),
                ("lr_eta", a.lr_eta),
                ("lr_critic", a.lr_critic),
                ("r_max", a.r_max),
                ("r_a", a.r_a),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(field_error(f(k), "must be finite and non-negative"));
                }
            }
            if !(0.0..=1.0).contains(&a.polyak) {
                return Err(field_error(f("polyak"), "must lie in [0, 1]"));
            }
            let e = a.epsilon;
            if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || !(e.div > 0.0) {
                return Err(field_error(
                    f("epsilon"),
                    "start and end must lie in [0, 1] and div must be positive",
                ));
            }
            if a.clip_norm <= 0.0 {
                return Err(field_error(f("clip_norm"), "must be positive"));
            }
            if dec && a.kind != AlgorithmKind::LioDec {
                return Err(field_error(f("kind"), "lio-dec agents model every other agent with their own architecture, so all agents must be lio-dec"));
            }
        }
        if matches!(self.env, EnvSpec::EscapeRoomAsym)
            && self.agents.iter().any(|a| a.kind.discrete_gifts())
        {
            return Err(field_error(
                "agents.kind",
                "discrete gift actions are not defined for the asymmetric escape room",
            ));
        }
        Ok(())
    }

    /// Fully resolved configuration in the file format, with every agent
    /// field spelled out under `[agent.<i>]`.
    pub fn to_toml(&self) -> String {
        let mut table = match toml::Table::try_from(self) {
            Ok(t) => t,
            Err(_) => return String::new(),
        };
        let agents = table.remove("agents");
        if let Some(toml::Value::Array(list)) = agents {
            let per_agent: toml::Table = list
                .into_iter()
                .enumerate()
                .map(|(i, a)| (i.to_string(), a))
                .collect();
            table.insert("agent".into(), toml::Value::Table(per_agent));
        }
        toml::to_string(&table).unwrap_or_default()
    }
}
