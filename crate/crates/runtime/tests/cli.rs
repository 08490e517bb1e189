//! The `ddrl` binary: subcommands, exit codes and environment overrides.

use std::path::Path;
use std::process::{Command, Output};

fn ddrl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddrl"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_inspect_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "rps.cfg",
        &format!("env.id = matrix_rps\nrun.frames = 3000\nleague.snapshot_every = 25\nleague.eval_games = 2\nrun.output_dir = {}\n", out.display()),
    );
    let o = ddrl(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("learner updates"));
    for f in ["metrics.jsonl", "league.json", "summary.txt", "effective.cfg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let league = out.join("league.json").display().to_string();
    let o = ddrl(&["inspect", &league], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("main#1"));
    let o = ddrl(&["eval", &league, "--games", "4"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("win rate"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write(dir.path(), "a.cfg", "topology.flavour = spicy\n");
    assert_eq!(ddrl(&["run", &bad_key], &[]).status.code(), Some(2));
    let bad_value = write(dir.path(), "b.cfg", "run.frames = lots\n");
    assert_eq!(ddrl(&["run", &bad_value], &[]).status.code(), Some(2));
    let ok = write(dir.path(), "c.cfg", &format!("run.frames = 0\nrun.output_dir = {}\n", dir.path().join("o").display()));
    assert_eq!(ddrl(&["run", &ok], &[("DDRL_RUN_FRAMESS", "1")]).status.code(), Some(2));
    assert_eq!(ddrl(&["run", &ok], &[("DDRL_TOPOLOGY_KIND", "ring")]).status.code(), Some(2));
    assert_eq!(ddrl(&["run", &ok], &[]).status.code(), Some(0));
}

#[test]
fn environment_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "c.cfg", &format!("run.frames = 100\nrun.output_dir = {}\n", out.display()));
    let o = ddrl(&["run", &cfg], &[("DDRL_RUN_FRAMES", "400"), ("DDRL_TOPOLOGY_KIND", "sync_barrier")]);
    assert_eq!(o.status.code(), Some(0));
    let effective = std::fs::read_to_string(out.join("effective.cfg")).unwrap();
    assert!(effective.contains("run.frames = 400"), "{effective}");
    assert!(effective.contains("topology.kind = sync_barrier"));
}

#[test]
fn bench_prints_one_row_per_topology() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.txt",
        "run.frames = 2000\ndelay.actor0.env_step = const:20\nrow.sync.topology.kind = sync_barrier\nrow.async.topology.kind = async_trajectory\n",
    );
    let o = ddrl(&["bench", &m], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("frames/sec") && text.contains("sync_barrier") && text.contains("async_trajectory"));
    let mixed = write(dir.path(), "n.txt", "row.a.env.id = chain_mdp\nrow.b.env.id = matching_pennies\n");
    let o = ddrl(&["bench", &mixed], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("differ"));
}

#[test]
fn killed_process_actor_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "k.cfg",
        &format!(
            "run.transport = sockets\nrun.spawn = process\ntopology.actors = 2\nrun.frames = 20000\nfaults.kill_actor = 0\nfaults.kill_after = 2\nrun.output_dir = {}\n",
            dir.path().join("o").display()
        ),
    );
    let o = ddrl(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("actor0"));
}
