//! Finite-difference harness for the production actor-critic gradients.
//!
//! Targets and advantages are recomputed here with [`vtrace_brute`] and a
//! plain discounted sum, then the production gradient is compared against
//! central differences of [`loss`].

use rand::Rng;

use super::{finite_difference, logits_and_value, loss, max_relative_error, vtrace_brute, OracleObjective, OracleSample};
use crate::learn::{a2c_gradient, ppo_dualclip_gradient, vtrace_gradient, LearnConfig, Trajectory, Transition};
use crate::policy::{Arch, PolicyParameters};
use crate::seed;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for components whose true value is (near) zero.
pub const FLOOR: f64 = 1e-8;
/// Accepted instances per (operation, architecture) pair.
pub const INSTANCES: usize = 25;

/// Gradient-producing operation under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradKind {
    A2c,
    Ppo,
    Vtrace,
}

fn random_arch(which: usize, rng: &mut impl Rng) -> Arch {
    let actions = rng.gen_range(2..=4);
    match which {
        0 => Arch::Tabular {
            states: rng.gen_range(1..=5),
            actions,
        },
        1 => Arch::Linear {
            inputs: rng.gen_range(1..=5),
            actions,
        },
        _ => Arch::Mlp1 {
            inputs: rng.gen_range(1..=4),
            hidden: rng.gen_range(2..=8),
            actions,
        },
    }
}

fn random_obs(arch: &Arch, rng: &mut impl Rng) -> Vec<f64> {
    match *arch {
        Arch::Tabular { states, .. } => {
            let mut x = vec![0.0; states];
            x[rng.gen_range(0..states)] = 1.0;
            x
        }
        _ => (0..arch.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn random_batch(arch: &Arch, rng: &mut impl Rng) -> Vec<Trajectory> {
    let actions = arch.actions();
    (0..rng.gen_range(1..=3))
        .map(|ti| {
            let len = rng.gen_range(1..=4);
            let terminal = rng.gen_bool(0.5);
            let steps = (0..len)
                .map(|i| {
                    let mut mask: Vec<bool> = (0..actions).map(|_| rng.gen_bool(0.7)).collect();
                    let forced = rng.gen_range(0..actions);
                    mask[forced] = true;
                    let legal: Vec<usize> = (0..actions).filter(|&a| mask[a]).collect();
                    Transition {
                        obs: random_obs(arch, rng),
                        mask,
                        action: legal[rng.gen_range(0..legal.len())],
                        reward: rng.gen_range(-1.0..1.0),
                        next_obs: random_obs(arch, rng),
                        done: terminal && i + 1 == len,
                        behavior_log_prob: rng.gen_range(0.05f64..1.0).ln(),
                        value_estimate: 0.0,
                        param_version: 1,
                        agent_id: 0,
                        player_id: "p".into(),
                        episode_id: ti as u64,
                        episode_step: i as u32,
                    }
                })
                .collect();
            Trajectory::new(steps, rng.gen_range(-1.0..1.0)).unwrap()
        })
        .collect()
}

fn log_prob(logits: &[f64], mask: &[bool], action: usize) -> f64 {
    let m = (0..logits.len()).filter(|&i| mask[i]).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..logits.len()).filter(|&i| mask[i]).map(|i| (logits[i] - m).exp()).sum();
    logits[action] - m - z.ln()
}

/// Oracle rows with targets and advantages fixed at `theta`.
fn oracle_samples(kind: GradKind, arch: &Arch, theta: &[f64], batch: &[Trajectory], cfg: &LearnConfig) -> Vec<OracleSample> {
    let mut rows = Vec::new();
    for traj in batch {
        let n = traj.len();
        let values: Vec<f64> = traj.transitions.iter().map(|t| logits_and_value(arch, theta, &t.obs).1).collect();
        let (targets, advantages) = match kind {
            GradKind::A2c | GradKind::Ppo => {
                let mut acc = if traj.is_terminal() { 0.0 } else { traj.bootstrap_value };
                let mut r = vec![0.0; n];
                for i in (0..n).rev() {
                    acc = traj.transitions[i].reward + cfg.gamma * acc;
                    r[i] = acc;
                }
                let adv = r.iter().zip(&values).map(|(r, v)| r - v).collect();
                (r, adv)
            }
            GradKind::Vtrace => {
                let ratios: Vec<f64> = traj
                    .transitions
                    .iter()
                    .map(|t| {
                        let (logits, _) = logits_and_value(arch, theta, &t.obs);
                        (log_prob(&logits, &t.mask, t.action) - t.behavior_log_prob).exp()
                    })
                    .collect();
                let bootstrap = if traj.is_terminal() {
                    0.0
                } else {
                    logits_and_value(arch, theta, &traj.transitions[n - 1].next_obs).1
                };
                vtrace_brute(&traj.rewards(), &values, bootstrap, &ratios, cfg.gamma, cfg.rho_bar, cfg.c_bar)
            }
        };
        for (i, t) in traj.transitions.iter().enumerate() {
            rows.push(OracleSample {
                obs: t.obs.clone(),
                mask: t.mask.clone(),
                action: t.action,
                behavior_log_prob: t.behavior_log_prob,
                value_target: targets[i],
                advantage: advantages[i],
            });
        }
    }
    rows
}

/// True when some ratio sits within `margin` of a clipping kink, where the
/// objective is not differentiable.
fn near_kink(arch: &Arch, theta: &[f64], rows: &[OracleSample], cfg: &LearnConfig, margin: f64) -> bool {
    rows.iter().any(|s| {
        let (logits, _) = logits_and_value(arch, theta, &s.obs);
        let r = (log_prob(&logits, &s.mask, s.action) - s.behavior_log_prob).exp();
        let kinks = [1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps, cfg.dual_clip_c];
        kinks.iter().any(|k| (r - k).abs() < margin)
    })
}

/// Worst relative error over [`INSTANCES`] random instances of `kind` on
/// architecture family `which_arch` (0 tabular, 1 linear, 2 one hidden
/// layer). Fails on the first instance above [`TOLERANCE`].
pub fn check(kind: GradKind, which_arch: usize, base_seed: u64) -> Result<f64, String> {
    let mut rng = seed::rng(base_seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < INSTANCES {
        let arch = random_arch(which_arch, &mut rng);
        let values: Vec<f32> = (0..arch.param_count()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let params = PolicyParameters::new("p".into(), 1, arch, values).unwrap();
        let theta = params.as_f64().to_vec();
        let batch = random_batch(&arch, &mut rng);
        let rho_bar = rng.gen_range(0.5..2.0);
        let cfg = LearnConfig {
            gamma: rng.gen_range(0.5..1.0),
            value_coef: rng.gen_range(0.1..1.0),
            entropy_coef: rng.gen_range(0.0..0.1),
            clip_eps: rng.gen_range(0.1..0.3),
            dual_clip_c: rng.gen_range(1.5..4.0),
            rho_bar,
            c_bar: rng.gen_range(0.3..=rho_bar),
            ..LearnConfig::default()
        };
        let rows = oracle_samples(kind, &arch, &theta, &batch, &cfg);
        let objective = match kind {
            GradKind::Ppo => {
                if near_kink(&arch, &theta, &rows, &cfg, 1e-3) {
                    continue;
                }
                OracleObjective::DualClip {
                    clip_eps: cfg.clip_eps,
                    dual_clip_c: cfg.dual_clip_c,
                }
            }
            _ => OracleObjective::Vanilla,
        };
        let analytic = match kind {
            GradKind::A2c => a2c_gradient(&params, &batch, cfg.gamma, cfg.value_coef, cfg.entropy_coef),
            GradKind::Ppo => ppo_dualclip_gradient(&params, &batch, &cfg),
            GradKind::Vtrace => vtrace_gradient(&params, &batch, &cfg),
        }
        .map_err(|e| format!("{kind:?} on {arch:?}: {e}"))?;
        if analytic.sample_count as usize != rows.len() {
            return Err(format!("{kind:?}: sample count {} for {} rows", analytic.sample_count, rows.len()));
        }
        let numeric = finite_difference(&theta, STEP, |th| loss(&arch, th, &rows, objective, cfg.value_coef, cfg.entropy_coef));
        let err = max_relative_error(&analytic.grad, &numeric, FLOOR);
        if err > TOLERANCE {
            return Err(format!("{kind:?} on {arch:?}: relative error {err:e}"));
        }
        worst = worst.max(err);
        done += 1;
    }
    Ok(worst)
}
