//! End-to-end runs on the simulated clock: accounting, determinism,
//! transport transparency, liveness and failure reporting.

mod common;

use common::{config, run};
use ddrl_core::league::League;
use ddrl_runtime::experiment::{run_experiment, RunError, RunOptions};
use proptest::prelude::*;

const KINDS: [&str; 7] = [
    "async_gradient",
    "async_trajectory",
    "central_inference",
    "sync_barrier",
    "sync_quorum",
    "bundled_allreduce",
    "replay_qlearning",
];

fn kind_text(kind: &str) -> String {
    let algo = if kind == "replay_qlearning" { "q" } else { "a2c" };
    format!("topology.kind = {kind}\nlearn.algorithm = {algo}\n")
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn samples_are_conserved(
        kind in 0usize..KINDS.len(),
        actors in 1usize..4,
        copies in 1usize..4,
        unroll in 1usize..12,
        frames in 0u64..3000,
        seed in 0u64..1000,
        straggle in 0u64..30,
    ) {
        let text = format!(
            "{}topology.actors = {actors}\nenv.copies = {copies}\nenv.unroll_length = {unroll}\nrun.frames = {frames}\nseed = {seed}\ndelay.actor0.env_step = const:{straggle}\ntopology.queue_capacity = 4\ntopology.batch_size = 2\ntopology.quorum_fraction = 0.5\ntopology.replay_sample = 8\ntopology.replay_capacity = 64\neval.episodes = 0\n",
            kind_text(KINDS[kind])
        );
        let report = run(&text).unwrap();
        let s = &report.summary;
        prop_assert!(s.conserved(), "{s}");
        prop_assert!(s.frames >= frames);
        for r in &report.metrics {
            prop_assert!(r.frames_per_second >= 0.0 && r.trajectories_per_second >= 0.0 && r.learner_updates_per_second >= 0.0);
            prop_assert!(r.busy_fraction.values().all(|b| (0.0..=1.0).contains(b)));
        }
    }
}

#[test]
fn identical_seeds_identical_parameters_and_schedules() {
    for kind in KINDS {
        let text = format!("{}seed = 7\nrun.frames = 4000\ntopology.actors = 3\nenv.copies = 2\ndelay.actors.env_step = uniform:1:5\n", kind_text(kind));
        let a = run(&text).unwrap();
        let b = run(&text).unwrap();
        assert_eq!(a.final_params, b.final_params, "{kind}");
        assert_eq!(a.schedule, b.schedule, "{kind}");
        assert_eq!(a.summary.schedule_digest, b.summary.schedule_digest);
        let c = run(&text.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.summary.final_checksum, c.summary.final_checksum, "{kind}");
    }
}

#[test]
fn chain_fifty_thousand_frames_twice() {
    let text = "seed = 7\nrun.frames = 50000\nenv.copies = 4\n";
    assert_eq!(run(text).unwrap().summary.final_checksum, run(text).unwrap().summary.final_checksum);
}

#[test]
fn zero_constant_delay_matches_no_injection() {
    let plain = "run.frames = 3000\ntopology.actors = 2\n";
    let zeroed = format!("{plain}delay.actors.send = const:0\ndelay.actors.fetch = const:0\ndelay.learner.infer = const:0\n");
    assert_eq!(run(plain).unwrap().schedule, run(&zeroed).unwrap().schedule);
}

#[test]
fn sockets_match_in_process() {
    for kind in ["async_trajectory", "sync_barrier", "async_gradient", "central_inference"] {
        let base = format!("{}seed = 3\nrun.frames = 4000\ntopology.actors = 2\nenv.copies = 2\n", kind_text(kind));
        let local = run(&base).unwrap();
        let remote = run(&format!("{base}run.transport = sockets\nrun.spawn = thread\n")).unwrap();
        assert_eq!(local.final_params, remote.final_params, "{kind}");
        assert_eq!(local.schedule, remote.schedule, "{kind}");
    }
}

#[test]
fn central_inference_tracks_the_learner() {
    let r = run("topology.kind = central_inference\ntopology.actors = 3\nenv.copies = 4\nrun.frames = 6000\ntopology.inference_batch_max = 8\n").unwrap();
    assert!(r.summary.inference_batches > 0);
    assert!(r.summary.mean_inference_batch > 1.0 && r.summary.mean_inference_batch <= 8.0);
    assert!(r.summary.updates > 0 && r.summary.conserved());
}

#[test]
fn zero_frame_budget_exits_cleanly() {
    for kind in KINDS {
        let r = run(&format!("{}run.frames = 0\n", kind_text(kind))).unwrap();
        assert!(r.metrics.is_empty(), "{kind}");
        assert_eq!((r.summary.frames, r.summary.updates, r.summary.final_version), (0, 0, 1));
    }
}

#[test]
fn halted_actor_async_reaches_budget_sync_reports_deadlock() {
    let halted = "run.frames = 5000\ntopology.actors = 3\ndelay.actor1.env_step = halt\n";
    for kind in ["async_trajectory", "async_gradient", "central_inference", "replay_qlearning"] {
        let r = run(&format!("{}{halted}", kind_text(kind))).unwrap();
        assert!(r.summary.frames >= 5000, "{kind}");
    }
    for kind in ["sync_barrier", "bundled_allreduce"] {
        match run(&format!("{}{halted}", kind_text(kind))) {
            Err(RunError::Deadlock { halted, waiting, partial, .. }) => {
                assert_eq!(halted, ["actor1"]);
                assert_eq!(waiting, ["actor0", "actor2"]);
                assert!(partial.conserved());
            }
            other => panic!("{kind}: expected a deadlock, got {other:?}"),
        }
    }
    // A quorum of two out of three tolerates one halted actor.
    let r = run(&format!("{}{halted}topology.quorum_fraction = 0.6\n", kind_text("sync_quorum"))).unwrap();
    assert!(r.summary.frames >= 5000);
}

#[test]
fn wall_clock_sync_deadlock_is_reported_within_timeout() {
    let start = std::time::Instant::now();
    let r = run("run.clock = wall\ntopology.kind = sync_barrier\ntopology.actors = 2\ndelay.actor0.env_step = halt\nrun.deadlock_timeout_ms = 300\n");
    assert!(matches!(r, Err(RunError::Deadlock { .. })), "{r:?}");
    assert!(start.elapsed().as_secs() < 10);
}

#[test]
fn wall_clock_runs_every_topology() {
    for kind in KINDS {
        let r = run(&format!("{}run.clock = wall\nrun.frames = 1500\ntopology.actors = 2\nenv.copies = 2\n", kind_text(kind))).unwrap();
        assert!(r.summary.frames >= 1500 && r.summary.conserved(), "{kind}: {}", r.summary);
    }
}

#[test]
fn zero_delay_single_actor_sync_and_async_throughput_agree() {
    let base = "run.frames = 20000\ntopology.actors = 1\nenv.copies = 4\nenv.unroll_length = 32\n";
    let sync = run(&format!("{base}topology.kind = sync_barrier\n")).unwrap().summary.frames_per_second;
    let asy = run(&format!("{base}topology.kind = async_trajectory\n")).unwrap().summary.frames_per_second;
    assert!((asy - sync).abs() / asy <= 0.05, "sync {sync} async {asy}");
}

#[test]
fn killed_actor_is_a_worker_crash() {
    for transport in ["run.transport = in_process\n", "run.transport = sockets\nrun.spawn = thread\n"] {
        let r = run(&format!("{transport}topology.actors = 2\nrun.frames = 20000\nfaults.kill_actor = 1\nfaults.kill_after = 3\n"));
        match r {
            Err(RunError::WorkerCrashed { worker, partial, .. }) => {
                assert_eq!(worker, "actor1");
                assert!(partial.frames > 0 && partial.frames < 20000);
            }
            other => panic!("expected a crash, got {other:?}"),
        }
    }
}

#[test]
fn rps_self_play_builds_a_league() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "env.id = matrix_rps\nrun.frames = 4000\nleague.snapshot_every = 20\nleague.eval_games = 4\nrun.output_dir = {}\n",
        dir.path().display()
    );
    let report = run_experiment(config(&text), &RunOptions { actor_exe: None, write_files: true }).unwrap();
    assert!(report.league.all_generations().len() >= 2);
    let league = League::load(&dir.path().join("league.json")).unwrap();
    assert!(league.all_generations().len() >= 2);
    assert!(!league.matches().is_empty());
    assert_eq!(league.ratings_or_initial(), report.league.ratings_or_initial());
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), report.metrics.len());
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn grid_capture_joint_training_runs() {
    let r = run("env.id = grid_capture\ncoop.mode = joint\ncoop.agent_id_feature = true\npolicy.arch = linear\nrun.frames = 3000\nleague.snapshot_every = 10\n").unwrap();
    assert!(r.summary.conserved() && r.summary.updates > 0);
}
