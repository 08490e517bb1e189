//! Helpers shared by the runtime integration tests.
#![allow(dead_code)]

use ddrl_core::coord::{InferReply, InferRequest};
use ddrl_core::league::{GenerationRef, MatchResult, Outcome};
use ddrl_core::learn::{Trajectory, Transition};
use ddrl_core::policy::{Arch, GradientUpdate, PolicyParameters};
use ddrl_runtime::actor::EpisodeStat;
use ddrl_runtime::config::ExperimentConfig;
use ddrl_runtime::experiment::{run_experiment, RunError, RunOptions, RunReport};
use ddrl_runtime::wire::WireMessage;
use rand::Rng;

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap_or_else(|e| panic!("bad test config: {e}\n{text}"))
}

pub fn run(text: &str) -> Result<RunReport, RunError> {
    run_experiment(config(text), &RunOptions::default())
}

fn random_params(rng: &mut impl Rng) -> PolicyParameters {
    let arch = match rng.gen_range(0..3) {
        0 => Arch::Tabular {
            states: rng.gen_range(1..6),
            actions: rng.gen_range(2..4),
        },
        1 => Arch::Linear {
            inputs: rng.gen_range(1..6),
            actions: rng.gen_range(2..4),
        },
        _ => Arch::Mlp1 {
            inputs: rng.gen_range(1..4),
            hidden: rng.gen_range(1..6),
            actions: rng.gen_range(2..4),
        },
    };
    let values = (0..arch.param_count()).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
    PolicyParameters::new(format!("p{}", rng.gen_range(0..9)).into(), rng.gen_range(1..1000), arch, values).unwrap()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect()
}

fn random_trajectory(rng: &mut impl Rng) -> Trajectory {
    let len = rng.gen_range(1..6);
    let dim = rng.gen_range(0..5);
    let actions = rng.gen_range(1..4);
    let terminal = rng.gen_bool(0.5);
    let steps = (0..len)
        .map(|i| Transition {
            obs: random_vec(rng, dim),
            mask: (0..actions).map(|a| a == 0 || rng.gen_bool(0.5)).collect(),
            action: 0,
            reward: rng.gen_range(-1.0..1.0),
            next_obs: random_vec(rng, dim),
            done: terminal && i + 1 == len,
            behavior_log_prob: -rng.gen_range(0.0..3.0),
            value_estimate: rng.gen_range(-1.0..1.0),
            param_version: rng.gen_range(1..50),
            agent_id: rng.gen_range(0..3),
            player_id: "main".into(),
            episode_id: rng.gen(),
            episode_step: i as u32,
        })
        .collect();
    Trajectory::new(steps, rng.gen_range(-1.0..1.0)).unwrap()
}

fn random_episodes(rng: &mut impl Rng) -> Vec<EpisodeStat> {
    (0..rng.gen_range(0..4))
        .map(|_| EpisodeStat {
            ret: rng.gen_range(-5.0..5.0),
            discounted: rng.gen_range(-5.0..5.0),
            length: rng.gen_range(1..100),
        })
        .collect()
}

/// A random message with wire tag `tag` (1..=8).
pub fn random_message(rng: &mut impl Rng, tag: u8) -> WireMessage {
    match tag {
        1 => WireMessage::ParamPush {
            slot: rng.gen_range(0..2),
            params: random_params(rng),
        },
        2 => WireMessage::ParamRequest {
            player_id: format!("player-{}", rng.gen::<u16>()).into(),
            min_version: rng.gen(),
        },
        3 => WireMessage::TrajBatch {
            frames: rng.gen_range(0..1 << 40),
            trajectories: (0..rng.gen_range(0..4)).map(|_| random_trajectory(rng)).collect(),
            episodes: random_episodes(rng),
        },
        4 => {
            let n = rng.gen_range(0..20);
            WireMessage::GradMsg {
                frames: rng.gen(),
                samples: rng.gen(),
                update: GradientUpdate {
                    grad: random_vec(rng, n),
                    base_version: rng.gen(),
                    sample_count: rng.gen(),
                    producer_id: format!("actor-{:02}", rng.gen_range(0..64)),
                },
                episodes: random_episodes(rng),
            }
        }
        5 => WireMessage::InferRequest(
            (0..rng.gen_range(0..5))
                .map(|_| {
                    let d = rng.gen_range(0..6);
                    InferRequest {
                        player_id: "main".into(),
                        observation: random_vec(rng, d),
                        mask: (0..rng.gen_range(1..4)).map(|_| rng.gen_bool(0.7)).collect(),
                        rng_seed: rng.gen(),
                    }
                })
                .collect(),
        ),
        6 => WireMessage::InferResponse(
            (0..rng.gen_range(0..5))
                .map(|_| InferReply {
                    action: rng.gen_range(0..8),
                    log_prob: -rng.gen_range(0.0..5.0),
                    value: rng.gen_range(-3.0..3.0),
                    version: rng.gen(),
                })
                .collect(),
        ),
        7 => {
            let mut m = MatchResult::new(
                GenerationRef::new("a", rng.gen_range(1..9)),
                GenerationRef::new("b", rng.gen_range(1..9)),
                [Outcome::AWin, Outcome::BWin, Outcome::Draw][rng.gen_range(0..3)],
                rng.gen_range(1..5),
            );
            m.id = rng.gen();
            WireMessage::MatchResult(m)
        }
        _ => WireMessage::Shutdown,
    }
}
