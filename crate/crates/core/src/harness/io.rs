//! Run directories and multi-seed execution.
//!
//! Each seed writes `<out>/<name>/<seed>/` containing `config.snapshot` (the
//! fully resolved configuration), `metrics.jsonl` (one JSON record per logged
//! episode or evaluation, then a final `summary` record with labels and any
//! failure), `summary.csv` (`episode,collective_return,agent0_return,...`),
//! `checkpoints/agent<i>.ckpt` for the final agents and
//! `checkpoints/<episode>/agent<i>.ckpt` for intermediate snapshots.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agents::write_checkpoint;

use super::analysis::AgentLabel;
use super::run::{run_seed, EpisodeRecord, EvalRecord, RunOutput};
use super::{ExperimentConfig, HarnessError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFiles {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Episode(EpisodeRecord),
    Eval(EvalRecord),
    Summary {
        run: String,
        seed: u64,
        labels: Vec<AgentLabel>,
        failure: Option<String>,
    },
}

pub fn write_run(
    out: &Path,
    cfg: &ExperimentConfig,
    run: &RunOutput,
) -> Result<RunFiles, HarnessError> {
    let dir = out.join(&cfg.name).join(run.log.seed.to_string());
    fs::create_dir_all(dir.join("checkpoints"))?;
    let mut snapshot = cfg.clone();
    snapshot.seed = run.log.seed;
    snapshot.seeds = 1;
    fs::write(dir.join("config.snapshot"), snapshot.to_toml())?;

    let metrics = dir.join("metrics.jsonl");
    let mut w = BufWriter::new(File::create(&metrics)?);
    let to_io = |e: serde_json::Error| HarnessError::Io(e.into());
    for r in &run.log.records {
        serde_json::to_writer(&mut w, &Line::Episode(r.clone())).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    for e in &run.log.evals {
        serde_json::to_writer(&mut w, &Line::Eval(e.clone())).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    let summary_line = Line::Summary {
        run: run.log.run.clone(),
        seed: run.log.seed,
        labels: run.log.labels.clone(),
        failure: run.log.failure.clone(),
    };
    serde_json::to_writer(&mut w, &summary_line).map_err(to_io)?;
    w.write_all(b"\n")?;
    w.flush()?;

    let summary = dir.join("summary.csv");
    let mut w = BufWriter::new(File::create(&summary)?);
    let n = run.log.records.first().map_or(0, |r| r.returns.len());
    let header: Vec<String> = ["episode".to_string(), "collective_return".to_string()]
        .into_iter()
        .chain((0..n).map(|i| format!("agent{i}_return")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for r in &run.log.records {
        let cols: Vec<String> = [r.episode.to_string(), r.collective_return.to_string()]
            .into_iter()
            .chain(r.returns.iter().map(|v| v.to_string()))
            .collect();
        writeln!(w, "{}", cols.join(","))?;
    }
    w.flush()?;

    let mut checkpoints = Vec::new();
    let last = run.log.records.last().map_or(0, |r| r.episode);
    for (agent, shape) in run.agents.iter().zip(&run.shapes) {
        let path = dir
            .join("checkpoints")
            .join(format!("agent{}.ckpt", agent.index));
        write_checkpoint(agent, *shape, last, BufWriter::new(File::create(&path)?))?;
        checkpoints.push(path);
    }
    for (episode, agents) in &run.snapshots {
        let sub = dir.join("checkpoints").join(episode.to_string());
        fs::create_dir_all(&sub)?;
        for (agent, shape) in agents.iter().zip(&run.shapes) {
            let path = sub.join(format!("agent{}.ckpt", agent.index));
            write_checkpoint(
                agent,
                *shape,
                *episode,
                BufWriter::new(File::create(&path)?),
            )?;
        }
    }
    Ok(RunFiles {
        dir,
        metrics,
        summary,
        checkpoints,
    })
}

/// Episode records of a `metrics.jsonl` file.
pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| HarnessError::Io(e.into()))? {
            Line::Episode(r) => out.push(r),
            Line::Eval(_) | Line::Summary { .. } => {}
        }
    }
    Ok(out)
}

/// Runs seeds `cfg.seed .. cfg.seed + cfg.seeds` on up to `threads` worker
/// threads. Results come back in seed order; each run is independent of the
/// thread that executed it.
pub fn run_sweep(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunOutput>, HarnessError> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput, HarnessError>>>> =
        Mutex::new((0..cfg.seeds).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, cfg.seeds) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= cfg.seeds {
                    break;
                }
                let r = run_seed(cfg, cfg.seed + k as u64);
                if let Ok(mut slots) = results.lock() {
                    slots[k] = Some(r);
                }
            });
        }
    });
    let slots = results.into_inner().unwrap_or_else(|p| p.into_inner());
    slots
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|| {
                Err(HarnessError::Io(std::io::Error::other(
                    "worker thread panicked",
                )))
            })
        })
        .collect()
}
