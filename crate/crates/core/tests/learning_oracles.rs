//! Return targets, V-trace and tabular Q-learning against independent
//! reference computations.

use ddrl_core::env::ChainMdp;
use ddrl_core::learn::{
    nstep_returns, q_update, trajectory_priority, transition_priority, vtrace, vtrace_targets, QTable, Trajectory,
    Transition, PRIORITY_FLOOR,
};
use ddrl_core::oracle::{chain_q_star, vtrace_brute};
use ddrl_core::seed;
use proptest::prelude::*;
use rand::Rng;

fn step(reward: f64, done: bool, value: f64, logp: f64) -> Transition {
    Transition {
        obs: vec![],
        mask: vec![true, true],
        action: 0,
        reward,
        next_obs: vec![],
        done,
        behavior_log_prob: logp,
        value_estimate: value,
        param_version: 1,
        agent_id: 0,
        player_id: "p".into(),
        episode_id: 0,
        episode_step: 0,
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[test]
fn on_policy_vtrace_reduces_to_nstep_returns() {
    let mut rng = seed::rng(2024);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let terminal = rng.gen_bool(0.5);
        let steps: Vec<Transition> = (0..n)
            .map(|i| {
                step(
                    rng.gen_range(-1.0..1.0),
                    terminal && i + 1 == n,
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.01f64..1.0).ln(),
                )
            })
            .collect();
        let behavior: Vec<f64> = steps.iter().map(|t| t.behavior_log_prob).collect();
        let values: Vec<f64> = steps.iter().map(|t| t.value_estimate).collect();
        let traj = Trajectory::new(steps, rng.gen_range(-2.0..2.0)).unwrap();
        let gamma = rng.gen_range(0.0..=1.0);
        let returns = nstep_returns(&traj, gamma).unwrap();
        let out = vtrace_targets(&traj, &behavior, gamma, 1.0, 1.0).unwrap();
        for t in 0..n {
            assert!((out.vs[t] - returns[t]).abs() <= 1e-9, "v_{t}: {} vs {}", out.vs[t], returns[t]);
            let adv = returns[t] - values[t];
            assert!((out.pg_advantages[t] - adv).abs() <= 1e-9);
        }
    }
}

#[test]
fn mixed_ratio_three_step_case_matches_brute_force() {
    let rewards = [0.3, -0.2, 1.0];
    let values = [0.1, 0.4, -0.3];
    let ratios = [0.5, 4.0, 1.0];
    let log_ratios: Vec<f64> = ratios.iter().map(|r: &f64| r.ln()).collect();
    let out = vtrace(&rewards, &values, 0.7, &log_ratios, 0.9, 1.0, 1.0).unwrap();
    let (vs, adv) = vtrace_brute(&rewards, &values, 0.7, &ratios, 0.9, 1.0, 1.0);
    for t in 0..3 {
        assert!((out.vs[t] - vs[t]).abs() < 1e-12);
        assert!((out.pg_advantages[t] - adv[t]).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn vtrace_recursion_matches_closed_form(
        rewards in proptest::collection::vec(-1.0f64..1.0, 1..8),
        seed_values in proptest::collection::vec(-2.0f64..2.0, 8),
        seed_log_ratios in proptest::collection::vec(-2.5f64..2.5, 8),
        bootstrap in -2.0f64..2.0,
        gamma in 0.0f64..=1.0,
        c_bar in 0.2f64..2.0,
        extra in 0.0f64..2.0,
    ) {
        let n = rewards.len();
        let values = &seed_values[..n];
        let log_ratios = &seed_log_ratios[..n];
        let ratios: Vec<f64> = log_ratios.iter().map(|l| l.exp()).collect();
        let rho_bar = c_bar + extra;
        let out = vtrace(&rewards, values, bootstrap, log_ratios, gamma, rho_bar, c_bar).unwrap();
        let (vs, adv) = vtrace_brute(&rewards, values, bootstrap, &ratios, gamma, rho_bar, c_bar);
        for t in 0..n {
            prop_assert!((out.vs[t] - vs[t]).abs() < 1e-9);
            prop_assert!((out.pg_advantages[t] - adv[t]).abs() < 1e-9);
        }
    }
}

#[test]
fn chain_q_learning_converges_to_value_iteration() {
    let chain = ChainMdp::new(5, 20);
    let n = chain.states();
    let q_star = chain_q_star(&chain, 0.9);
    assert!((q_star[0][1] - 0.729).abs() < 1e-12);

    let mut rng = seed::rng(17);
    let transitions: Vec<Transition> = (0..10_000)
        .map(|_| {
            let s = rng.gen_range(0..n - 1);
            let a = rng.gen_range(0..2);
            let (s2, r, terminal) = chain.transition(s, a);
            Transition {
                obs: one_hot(n, s),
                action: a,
                reward: r,
                next_obs: one_hot(n, s2),
                done: terminal,
                ..step(0.0, false, 0.0, 0.5f64.ln())
            }
        })
        .collect();
    let table = q_update(&QTable::zeros(n, 2), &transitions, 0.1, 0.9).unwrap();
    let mut worst: f64 = 0.0;
    for (s, row) in q_star.iter().enumerate().take(n - 1) {
        for (a, q) in row.iter().enumerate() {
            worst = worst.max((table.get(s, a) - q).abs());
        }
    }
    assert!(worst < 0.01, "max-norm distance {worst}");
}

#[test]
fn priorities_match_an_independent_pass() {
    let mut rng = seed::rng(5);
    let n = 6;
    let mut table = QTable::zeros(n, 2);
    for v in table.q.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for _ in 0..500 {
        let s = rng.gen_range(0..n);
        let s2 = rng.gen_range(0..n);
        let a = rng.gen_range(0..2);
        let done = rng.gen_bool(0.3);
        let r = rng.gen_range(-1.0..1.0);
        let t = Transition {
            obs: one_hot(n, s),
            action: a,
            reward: r,
            next_obs: one_hot(n, s2),
            done,
            ..step(0.0, false, 0.0, -0.1)
        };
        let next = if done { 0.0 } else { table.q[s2 * 2].max(table.q[s2 * 2 + 1]) };
        let expected = (r + 0.95 * next - table.q[s * 2 + a]).abs() + 1e-3;
        assert!((transition_priority(&t, &table, 0.95).unwrap() - expected).abs() < 1e-15);
    }
    let terminal = Trajectory::new(vec![step(1.0, true, 0.0, -0.1)], 0.0).unwrap();
    assert!((trajectory_priority(&terminal, 0.5).unwrap() - 1.001).abs() < 1e-15);
    let zero = Trajectory::new(vec![step(0.0, true, 0.0, -0.1)], 0.0).unwrap();
    assert_eq!(trajectory_priority(&zero, 0.5).unwrap(), PRIORITY_FLOOR);
}
