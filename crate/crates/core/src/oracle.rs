//! Independent reference computations used only by tests: value iteration,
//! a forward-only loss with central finite differences, a closed-form
//! V-trace sum and a chi-square goodness-of-fit p-value.
//!
//! Nothing here calls into the production gradient or recursion code,
//! except the comparison harness in [`gradcheck`].

pub mod gradcheck;

use crate::env::ChainMdp;
use crate::policy::Arch;

/// Optimal action values of a chain by value iteration, `[state][action]`.
pub fn chain_q_star(chain: &ChainMdp, gamma: f64) -> Vec<[f64; 2]> {
    let n = chain.states();
    let mut q: Vec<[f64; 2]> = vec![[0.0; 2]; n];
    for _ in 0..10_000 {
        let mut next = q.clone();
        let mut change: f64 = 0.0;
        for s in 0..n - 1 {
            for a in 0..2 {
                let (s2, r, terminal) = chain.transition(s, a);
                let cont = if terminal { 0.0 } else { q[s2][0].max(q[s2][1]) };
                next[s][a] = r + gamma * cont;
                change = change.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if change < 1e-15 {
            break;
        }
    }
    q
}

/// `v_s = V_s + sum_{t >= s} gamma^{t-s} (prod_{s <= i < t} c_i) delta_t`
/// evaluated term by term, plus the matching policy-gradient advantages.
pub fn vtrace_brute(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    ratios: &[f64],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let v_at = |t: usize| if t < n { values[t] } else { bootstrap };
    let delta = |t: usize| ratios[t].min(rho_bar) * (rewards[t] + gamma * v_at(t + 1) - values[t]);
    let vs: Vec<f64> = (0..n)
        .map(|s| {
            let mut total = values[s];
            for t in s..n {
                let mut coef = gamma.powi((t - s) as i32);
                for &r in &ratios[s..t] {
                    coef *= r.min(c_bar);
                }
                total += coef * delta(t);
            }
            total
        })
        .collect();
    let adv = (0..n)
        .map(|t| {
            let next = if t + 1 < n { vs[t + 1] } else { bootstrap };
            ratios[t].min(rho_bar) * (rewards[t] + gamma * next - values[t])
        })
        .collect();
    (vs, adv)
}

/// One loss row, in the form the oracle needs.
#[derive(Clone, Debug)]
pub struct OracleSample {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub behavior_log_prob: f64,
    pub value_target: f64,
    pub advantage: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum OracleObjective {
    Vanilla,
    DualClip { clip_eps: f64, dual_clip_c: f64 },
}

/// Logits and value of a parameter vector, computed without the production
/// forward pass.
pub fn logits_and_value(arch: &Arch, theta: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
    fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        (0..rows)
            .map(|r| b[r] + (0..x.len()).map(|c| w[r * x.len() + c] * x[c]).sum::<f64>())
            .collect()
    }
    match *arch {
        Arch::Tabular { states, actions } => {
            let s = if states == 1 && x.is_empty() {
                0
            } else {
                x.iter().position(|&v| v == 1.0).expect("one-hot")
            };
            let row = &theta[s * (actions + 1)..];
            (row[..actions].to_vec(), row[actions])
        }
        Arch::Linear { inputs, actions } => {
            let w = &theta[..actions * inputs];
            let b = &theta[actions * inputs..actions * (inputs + 1)];
            let wv = &theta[actions * (inputs + 1)..actions * (inputs + 1) + inputs];
            let bv = theta[actions * (inputs + 1) + inputs];
            (affine(w, b, x, actions), affine(wv, &[bv], x, 1)[0])
        }
        Arch::Mlp1 {
            inputs,
            hidden,
            actions,
        } => {
            let w1 = &theta[..hidden * inputs];
            let b1 = &theta[hidden * inputs..hidden * (inputs + 1)];
            let h: Vec<f64> = affine(w1, b1, x, hidden).into_iter().map(f64::tanh).collect();
            let rest = &theta[hidden * (inputs + 1)..];
            let w = &rest[..actions * hidden];
            let b = &rest[actions * hidden..actions * (hidden + 1)];
            let wv = &rest[actions * (hidden + 1)..actions * (hidden + 1) + hidden];
            let bv = rest[actions * (hidden + 1) + hidden];
            (affine(w, b, &h, actions), affine(wv, &[bv], &h, 1)[0])
        }
    }
}

/// Summed actor-critic loss computed from scratch.
pub fn loss(
    arch: &Arch,
    theta: &[f64],
    samples: &[OracleSample],
    objective: OracleObjective,
    value_coef: f64,
    entropy_coef: f64,
) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let (logits, value) = logits_and_value(arch, theta, &s.obs);
        let legal: Vec<usize> = (0..logits.len()).filter(|&i| s.mask[i]).collect();
        let m = legal.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = legal.iter().map(|&i| (logits[i] - m).exp()).sum();
        let logp = |i: usize| logits[i] - m - z.ln();
        let entropy: f64 = -legal.iter().map(|&i| logp(i).exp() * logp(i)).sum::<f64>();
        let lp = logp(s.action);
        let obj = match objective {
            OracleObjective::Vanilla => lp * s.advantage,
            OracleObjective::DualClip { clip_eps, dual_clip_c } => {
                let r = (lp - s.behavior_log_prob).exp();
                let a = s.advantage;
                let clipped = r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
                let base = (r * a).min(clipped);
                if a < 0.0 {
                    base.max(dual_clip_c * a)
                } else {
                    base
                }
            }
        };
        total += -obj + value_coef * (s.value_target - value).powi(2) - entropy_coef * entropy;
    }
    total
}

/// Central finite-difference gradient of `f` at `theta`.
pub fn finite_difference(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Upper-tail p-value of Pearson's chi-square statistic for observed counts
/// against expected probabilities.
pub fn chi_square_p_value(observed: &[u64], expected_probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let df = (observed.len() - 1).max(1) as f64;
    ChiSquared::new(df).expect("positive degrees of freedom").sf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_optimal_value() {
        let q = chain_q_star(&ChainMdp::new(5, 20), 0.9);
        assert!((q[0][1] - 0.729).abs() < 1e-12);
        assert!((q[3][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_of_quadratic() {
        let g = finite_difference(&[1.0, -2.0], 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!(max_relative_error(&g, &[2.0, 3.0], 1e-6) < 1e-8);
    }

    #[test]
    fn uniform_counts_fit() {
        assert!(chi_square_p_value(&[250, 250, 250, 250], &[0.25; 4]) > 0.99);
        assert!(chi_square_p_value(&[400, 200, 200, 200], &[0.25; 4]) < 1e-6);
    }
}
