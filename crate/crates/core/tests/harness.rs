use std::process::Command;

use lio::harness::{read_metrics, run_seed, run_sweep, write_run, ExperimentConfig};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

const ER_LIO: &str = r#"
name = "er"
episodes = 40
eval_every = 20
eval_episodes = 3
[env]
kind = "escape-room"
n = 2
m = 1
[agents]
kind = "lio"
lr_theta = 1e-3
"#;

fn lio_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lio"))
}

#[test]
fn same_seed_reproduces_metrics_bit_for_bit() {
    let cfg = config(ER_LIO);
    let a = run_seed(&cfg, 7).unwrap();
    let b = run_seed(&cfg, 7).unwrap();
    assert_eq!(a.log, b.log);
    for (x, y) in a.agents.iter().zip(&b.agents) {
        assert_eq!(x.policy.params.values, y.policy.params.values);
        assert_eq!(
            x.incentive.as_ref().unwrap().params.values,
            y.incentive.as_ref().unwrap().params.values
        );
    }
    let c = run_seed(&cfg, 8).unwrap();
    assert_ne!(a.log.records, c.log.records);
}

#[test]
fn sweep_threads_do_not_change_results() {
    let mut cfg = config(ER_LIO);
    cfg.seeds = 3;
    cfg.episodes = 10;
    let serial = run_sweep(&cfg, 1).unwrap();
    let parallel = run_sweep(&cfg, 3).unwrap();
    for (s, p) in serial.iter().zip(&parallel) {
        assert_eq!(s.log, p.log);
    }
    assert_eq!(
        serial.iter().map(|r| r.log.seed).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
}

#[test]
fn follow_up_trajectory_comes_from_updated_policies() {
    let out = run_seed(&config(ER_LIO), 3).unwrap();
    for (k, r) in out.log.records.iter().enumerate() {
        assert_eq!(r.episode, k as u64);
        assert_eq!(r.trajectory, 2 * r.episode);
        assert_eq!(r.follow_up, Some(r.trajectory + 1));
        let next: Vec<u64> = r.policy_versions.iter().map(|v| v + 1).collect();
        assert_eq!(r.follow_up_versions.as_ref(), Some(&next));
        assert_eq!(r.policy_versions, vec![k as u64; 2]);
    }
}

#[test]
fn baselines_use_one_trajectory_per_iteration() {
    let cfg = config(
        "episodes = 5\n[env]\nkind = \"escape-room\"\nn = 2\nm = 1\n[agents]\nkind = \"pg\"\n",
    );
    let out = run_seed(&cfg, 0).unwrap();
    for r in &out.log.records {
        assert_eq!(r.trajectory, r.episode);
        assert_eq!(r.follow_up, None);
    }
}

#[test]
fn exploration_follows_linear_schedule() {
    let cfg = config(
        "episodes = 12\n[env]\nkind = \"ipd\"\n[agents]\nkind = \"pg\"\nepsilon = { start = 1.0, end = 0.2, div = 8.0 }\n",
    );
    let out = run_seed(&cfg, 0).unwrap();
    for r in &out.log.records {
        let want = if r.episode >= 8 {
            0.2
        } else {
            1.0 - 0.1 * r.episode as f64
        };
        assert!(
            (r.epsilon[0] - want).abs() < 1e-12,
            "episode {}: {}",
            r.episode,
            r.epsilon[0]
        );
    }
}

#[test]
fn greedy_evaluations_are_logged() {
    let out = run_seed(&config(ER_LIO), 1).unwrap();
    let at: Vec<u64> = out.log.evals.iter().map(|e| e.episode).collect();
    assert_eq!(at, vec![20, 40]);
    assert!(out
        .log
        .evals
        .iter()
        .all(|e| e.episodes == 3 && e.steps >= 1.0 && e.steps <= 5.0));
}

#[test]
fn run_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ER_LIO);
    cfg.checkpoint_every = 20;
    let out = run_seed(&cfg, 2).unwrap();
    let files = write_run(dir.path(), &cfg, &out).unwrap();
    assert_eq!(files.dir, dir.path().join("er").join("2"));
    assert_eq!(read_metrics(&files.metrics).unwrap(), out.log.records);
    let csv = std::fs::read_to_string(&files.summary).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "episode,collective_return,agent0_return,agent1_return"
    );
    assert_eq!(csv.lines().count(), out.log.records.len() + 1);
    let snap = ExperimentConfig::from_toml(
        &std::fs::read_to_string(files.dir.join("config.snapshot")).unwrap(),
    )
    .unwrap();
    assert_eq!(snap.agents, cfg.agents);
    assert_eq!(snap.seed, 2);
    assert_eq!(files.checkpoints.len(), 2);
    assert!(files.dir.join("checkpoints/20/agent1.ckpt").exists());
}

#[test]
fn exact_run_reaches_mutual_cooperation() {
    let cfg = config("episodes = 2000\n[env]\nkind = \"ipd\"\n[agents]\nkind = \"exact-lio\"\n");
    let out = run_seed(&cfg, 0).unwrap();
    let last = out.log.records.last().unwrap();
    let per_step = last.per_step_collective();
    assert!(
        (-2.1..=-2.0).contains(&per_step),
        "joint reward per step {per_step}"
    );
}

#[test]
fn cli_oracle_prints_escape_room_optimum() {
    let out = lio_bin().args(["oracle", "er", "2", "1"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "9");
    let out = lio_bin().args(["oracle", "er", "3", "2"]).output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "8");
}

#[test]
fn cli_vectorfield_with_no_defection_incentive_raises_cooperation_incentive() {
    let out = lio_bin()
        .args(["vectorfield", "--eta1d", "0.0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "deta1c").unwrap();
    let mut rows = 0;
    for line in lines {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(v > 0.0, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 121);
}

#[test]
fn cli_reports_config_errors_with_field_and_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "[env]\nkind = \"ipd\"\n[agents]\nkind = \"lio\"\nlearning_rate = 0.1\n",
    )
    .unwrap();
    let out = lio_bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains("agent.0") && err.contains("learning_rate"),
        "{err}"
    );

    let missing = lio_bin()
        .args(["run", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn cli_reports_divergence_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("div.toml");
    // a step size this large overflows the policy parameters within a few episodes
    std::fs::write(&path, "episodes = 50\n[env]\nkind = \"ipd\"\n[agents]\nkind = \"pg\"\nlr_theta = 1e300\nclip_norm = 1e300\n")
        .unwrap();
    let out = lio_bin()
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn cli_run_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ok.toml");
    std::fs::write(
        &path,
        "name = \"tiny\"\nepisodes = 3\n[env]\nkind = \"ipd\"\n[agents]\nkind = \"lio\"\n",
    )
    .unwrap();
    let out = lio_bin()
        .arg("run")
        .arg(&path)
        .args(["--seed", "4", "--seeds", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for seed in ["4", "5"] {
        let run = dir.path().join("tiny").join(seed);
        for f in [
            "config.snapshot",
            "metrics.jsonl",
            "summary.csv",
            "checkpoints/agent0.ckpt",
        ] {
            assert!(run.join(f).exists(), "{seed}/{f}");
        }
    }
}
