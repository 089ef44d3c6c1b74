use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Env;

/// One environment step, as written to a JSONL trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub state_hash: String,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

pub struct TraceWriter<W: Write> {
    out: W,
    step: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, step: 0 }
    }

    /// Records a step; call after `env.step` so the hash is of the new state.
    pub fn record(
        &mut self,
        env: &dyn Env,
        actions: &[usize],
        rewards: &[f64],
        done: bool,
    ) -> io::Result<()> {
        let rec = TraceRecord {
            step: self.step,
            state_hash: env.state_hash(),
            actions: actions.to_vec(),
            rewards: rewards.to_vec(),
            done,
        };
        self.step = if done { 0 } else { self.step + 1 };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trace<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            serde_json::from_str(&l?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        })
        .collect()
}
