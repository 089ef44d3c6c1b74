use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use lio::agents::read_checkpoint;
use lio::envs::{er_optimal_return, CleanupConfig};
use lio::exact_ipd::{vector_field, write_field_csv, FieldAxis, FieldSpec};
use lio::harness::{
    probe_incentives, run_experiment, run_sweep, write_run, ExperimentConfig, HarnessError,
    ProbeKind, RunOutput,
};

#[derive(Parser)]
#[command(
    name = "lio",
    version,
    about = "Train and analyse incentive-learning agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the seeds of a config one after another.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train all seeds of a config in parallel.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Export the exact IPD update field as CSV.
    Vectorfield {
        #[arg(long, value_enum, default_value_t = Axis::C)]
        axis: Axis,
        /// Agent 1's incentive for defection, held fixed when sweeping the C axis.
        #[arg(long, default_value_t = 0.0)]
        eta1d: f64,
        /// Agent 1's incentive for cooperation, held fixed when sweeping the D axis.
        #[arg(long, default_value_t = 0.0)]
        eta1c: f64,
        #[arg(long, default_value_t = 11)]
        resolution: usize,
        #[arg(long, default_value_t = 0.5)]
        theta1: f64,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure what a trained Cleanup incentive function pays scripted agents.
    Probe {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Map::Small)]
        map: Map,
    },
    /// Print ground-truth values.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Best collective return in Escape Room with N agents and lever threshold M.
    Er { n: usize, m: usize },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    C,
    D,
}

#[derive(Clone, Copy, ValueEnum)]
enum Map {
    Small,
    Large,
}

fn load(path: &Path, episodes: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(e) = episodes {
        cfg.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(
    cfg: &ExperimentConfig,
    runs: &[RunOutput],
    out: &Path,
) -> Result<ExitCode, HarnessError> {
    let mut diverged = false;
    for run in runs {
        let files = write_run(out, cfg, run)?;
        let k = 100.min(run.log.records.len()).max(1);
        let tail = run.log.tail_mean(k, |r| r.collective_return);
        let greedy = run.log.eval_tail(5);
        match &run.log.failure {
            Some(f) => {
                diverged = true;
                eprintln!("seed {}: {f}", run.log.seed);
            }
            None => println!(
                "seed {}: collective return {tail:.4} (last {k} logged), greedy {greedy:.4}, labels {:?} -> {}",
                run.log.seed,
                run.log.labels,
                files.dir.display()
            ),
        }
    }
    Ok(if diverged {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            seeds,
            episodes,
            out,
        } => {
            let mut cfg = load(&config, episodes)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(k) = seeds {
                cfg.seeds = k;
            }
            cfg.validate()?;
            info!("running {} for {} seed(s)", cfg.name, cfg.seeds);
            let runs = run_experiment(&cfg)?;
            report(&cfg, &runs, &out)
        }
        Command::Sweep {
            config,
            threads,
            episodes,
            out,
        } => {
            let cfg = load(&config, episodes)?;
            let threads = threads
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            info!(
                "sweeping {} over {} seed(s) on {threads} thread(s)",
                cfg.name, cfg.seeds
            );
            let runs = run_sweep(&cfg, threads)?;
            report(&cfg, &runs, &out)
        }
        Command::Vectorfield {
            axis,
            eta1d,
            eta1c,
            resolution,
            theta1,
            alpha,
            beta,
            gamma,
            out,
        } => {
            let d = FieldSpec::default();
            let spec = FieldSpec {
                axis: match axis {
                    Axis::C => FieldAxis::EtaC,
                    Axis::D => FieldAxis::EtaD,
                },
                fixed: match axis {
                    Axis::C => eta1d,
                    Axis::D => eta1c,
                },
                resolution,
                theta1,
                alpha: alpha.unwrap_or(d.alpha),
                beta: beta.unwrap_or(d.beta),
                gamma: gamma.unwrap_or(d.gamma),
            };
            let rows = vector_field(&spec).map_err(|e| HarnessError::Config {
                field: "vectorfield".into(),
                message: e.to_string(),
            })?;
            match out {
                Some(p) => write_field_csv(&rows, BufWriter::new(File::create(p)?))?,
                None => write_field_csv(&rows, io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Probe {
            checkpoint,
            episodes,
            seed,
            map,
        } => {
            let (_, agent) = read_checkpoint(BufReader::new(File::open(&checkpoint)?))?;
            let cfg = match map {
                Map::Small => CleanupConfig::small(),
                Map::Large => CleanupConfig::large(),
            };
            let results = probe_incentives(
                &agent,
                &cfg,
                &[ProbeKind::R, ProbeKind::C, ProbeKind::M],
                episodes,
                seed,
            )?;
            println!("probe,mean,stderr");
            for r in results {
                println!("{:?},{},{}", r.kind, r.mean, r.stderr);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle {
            which: Oracle::Er { n, m },
        } => {
            println!("{}", er_optimal_return(n, m)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
