//! Prioritized replay distribution and sum-tree consistency, plus the
//! unfinished-to-finished episode move under concurrent producers.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;

use ddrl_core::buffer::{EpisodeBuffer, PrioritizedBuffer, SumTree};
use ddrl_core::learn::Transition;
use ddrl_core::oracle::chi_square_p_value;
use ddrl_core::seed;
use rand::Rng;

#[test]
fn sampling_frequencies_fit_priority_proportions() {
    let mut rng = seed::rng(77);
    for case in 0..12 {
        let len = rng.gen_range(1..=64);
        let priorities: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..5.0)).collect();
        let mut buf = PrioritizedBuffer::new(64);
        let ids: Vec<u64> = priorities.iter().enumerate().map(|(i, &p)| buf.push(i, p).unwrap().0).collect();
        let slot: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut counts = vec![0u64; len];
        for (id, _) in buf.sample(100_000, &mut rng).unwrap() {
            counts[slot[&id]] += 1;
        }
        let total: f64 = priorities.iter().sum();
        let probs: Vec<f64> = priorities.iter().map(|p| p / total).collect();
        if len > 1 {
            let p = chi_square_p_value(&counts, &probs);
            assert!(p > 0.01, "case {case}: chi-square p = {p}");
        } else {
            assert_eq!(counts[0], 100_000);
        }
    }
}

#[test]
fn sum_tree_audit_survives_random_operations() {
    let mut rng = seed::rng(3);
    let mut tree = SumTree::new(100);
    let mut shadow = vec![0.0; 100];
    for _ in 0..100_000 {
        let leaf = rng.gen_range(0..100);
        let v = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..10.0) };
        tree.set(leaf, v);
        shadow[leaf] = v;
    }
    assert!(tree.audit());
    let fresh: f64 = shadow.iter().sum();
    assert!((tree.total() - fresh).abs() <= 1e-9 * fresh.max(1.0));

    let mut buf = PrioritizedBuffer::new(257);
    let mut live = Vec::new();
    for _ in 0..100_000 {
        match rng.gen_range(0..3) {
            0 | 1 => {
                let (id, evicted) = buf.push((), rng.gen_range(0.01..3.0)).unwrap();
                live.push(id);
                if let Some(e) = evicted {
                    live.retain(|&x| x != e);
                }
            }
            _ if !live.is_empty() => {
                let id = live[rng.gen_range(0..live.len())];
                buf.update_priorities(&[id], &[rng.gen_range(0.01..3.0)]).unwrap();
            }
            _ => {}
        }
    }
    assert!(buf.audit());
    let fresh: f64 = live.iter().map(|&id| buf.priority(id).unwrap()).sum();
    assert!((buf.total() - fresh).abs() <= 1e-9 * fresh);
}

fn tagged(agent: usize, step: u32) -> Transition {
    Transition {
        obs: vec![],
        mask: vec![true],
        action: 0,
        reward: f64::from(step),
        next_obs: vec![],
        done: false,
        behavior_log_prob: 0.0,
        value_estimate: 0.0,
        param_version: 1,
        agent_id: agent,
        player_id: "p".into(),
        episode_id: agent as u64,
        episode_step: step,
    }
}

#[test]
fn interleaved_producers_keep_their_own_steps() {
    for trial in 0..20u64 {
        let buf = Arc::new(EpisodeBuffer::<usize>::new());
        let producers: Vec<_> = (0..4)
            .map(|agent| {
                let buf = buf.clone();
                thread::spawn(move || {
                    let mut rng = seed::rng(seed::derive(trial, agent as u64));
                    buf.begin(agent);
                    for s in 0..200 {
                        buf.append_step(agent, tagged(agent, s));
                        if rng.gen_bool(0.1) {
                            thread::yield_now();
                        }
                    }
                    buf.finish(&agent, 0.0).unwrap()
                })
            })
            .collect();
        let mut seen = 0;
        for (agent, h) in producers.into_iter().enumerate() {
            let traj = h.join().unwrap();
            assert_eq!(traj.len(), 200);
            for (i, t) in traj.transitions.iter().enumerate() {
                assert_eq!(t.agent_id, agent);
                assert_eq!(t.episode_step, i as u32);
            }
            assert!(!buf.is_unfinished(&agent));
            seen += traj.len();
        }
        let drained = buf.drain_finished();
        assert_eq!(drained.len(), 4);
        assert_eq!(drained.iter().map(|t| t.len()).sum::<usize>(), seen);
        assert_eq!(buf.unfinished_steps(), 0);
    }
}
