//! Versioned parameter blobs.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header describing the agent and every parameter section, then each
//! section's values as little-endian `f64` in header order. Optimizer state
//! is not stored.

use std::io::{Read, Write};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, AgentError, AgentShape};
use crate::nn::MlpSpec;

const MAGIC: &[u8; 8] = b"LIOCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub layout: MlpSpec,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub index: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_env_actions: usize,
    pub action_code_dim: usize,
    pub episode: u64,
    pub version: u64,
    pub config: AgentConfig,
    pub sections: Vec<Section>,
}

fn sections(agent: &Agent) -> Vec<(&str, &MlpSpec, &[f64])> {
    let mut out: Vec<(&str, &MlpSpec, &[f64])> =
        vec![("policy", agent.policy.spec(), &agent.policy.params.values)];
    if let Some(n) = &agent.incentive {
        out.push(("incentive", n.spec(), &n.params.values));
    }
    if let Some(h) = &agent.reward_head {
        out.push(("reward_head", &h.params.layout, &h.params.values));
    }
    if let Some(c) = &agent.critic {
        out.push(("critic", &c.params.layout, &c.params.values));
        out.push(("critic_target", &c.params.layout, &c.target));
    }
    out
}

pub fn write_checkpoint<W: Write>(
    agent: &Agent,
    shape: AgentShape,
    episode: u64,
    mut out: W,
) -> Result<(), AgentError> {
    let secs = sections(agent);
    let header = CheckpointHeader {
        index: agent.index,
        n_agents: shape.n_agents,
        obs_dim: shape.obs_dim,
        n_env_actions: shape.n_env_actions,
        action_code_dim: shape.action_code_dim,
        episode,
        version: agent.version,
        config: agent.config.clone(),
        sections: secs
            .iter()
            .map(|(n, l, v)| Section {
                name: n.to_string(),
                layout: (*l).clone(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    let io = |e: std::io::Error| AgentError::Checkpoint(e.to_string());
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for (_, _, values) in secs {
        let mut buf = Vec::with_capacity(values.len() * 8);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(CheckpointHeader, Agent), AgentError> {
    let io = |e: std::io::Error| AgentError::Checkpoint(e.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(AgentError::Checkpoint("not a checkpoint file".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(AgentError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
    input.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    let shape = AgentShape {
        index: header.index,
        n_agents: header.n_agents,
        obs_dim: header.obs_dim,
        n_env_actions: header.n_env_actions,
        action_code_dim: header.action_code_dim,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut agent = Agent::new(header.config.clone(), shape, &mut rng)?;
    agent.version = header.version;
    for sec in &header.sections {
        let mut raw = vec![0u8; sec.len * 8];
        input.read_exact(&mut raw).map_err(io)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap_or([0; 8])))
            .collect();
        let target = match sec.name.as_str() {
            "policy" => Some(&mut agent.policy.params.values),
            "incentive" => agent.incentive.as_mut().map(|n| &mut n.params.values),
            "reward_head" => agent.reward_head.as_mut().map(|h| &mut h.params.values),
            "critic" => agent.critic.as_mut().map(|c| &mut c.params.values),
            "critic_target" => agent.critic.as_mut().map(|c| &mut c.target),
            _ => None,
        };
        match target {
            Some(t) if t.len() == values.len() => *t = values,
            _ => {
                return Err(AgentError::Checkpoint(format!(
                    "section {} does not match the agent layout",
                    sec.name
                )))
            }
        }
    }
    Ok((header, agent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AlgorithmKind;

    #[test]
    fn round_trip_is_exact() {
        let shape = AgentShape {
            index: 1,
            n_agents: 2,
            obs_dim: 7,
            n_env_actions: 3,
            action_code_dim: 3,
        };
        for kind in [AlgorithmKind::Lio, AlgorithmKind::AcC, AlgorithmKind::PgD] {
            let cfg = AgentConfig {
                kind,
                init_scale: 0.3,
                ..Default::default()
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let mut agent = Agent::new(cfg, shape, &mut rng).unwrap();
            agent.version = 17;
            let mut buf = Vec::new();
            write_checkpoint(&agent, shape, 1234, &mut buf).unwrap();
            let (h, back) = read_checkpoint(&buf[..]).unwrap();
            assert_eq!(h.episode, 1234);
            assert_eq!(back.policy, agent.policy);
            assert_eq!(back.incentive, agent.incentive);
            assert_eq!(back.reward_head, agent.reward_head);
            assert_eq!(
                back.critic.as_ref().map(|c| &c.target),
                agent.critic.as_ref().map(|c| &c.target)
            );
            assert_eq!(back.version, 17);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(read_checkpoint(&b"NOTACKPT...."[..]).is_err());
    }
}
