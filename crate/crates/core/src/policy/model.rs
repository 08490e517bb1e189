//! Forward and backward passes for the three policy/value architectures.
//!
//! Parameter layouts (row-major):
//!
//! * tabular: per state `[logits(A), value]`
//! * linear: `[W_pi (A x D), b_pi (A), w_v (D), b_v]`
//! * mlp1: `[W_1 (H x D), b_1 (H), W_pi (A x H), b_pi (A), w_v (H), b_v]`

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::env::EnvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Tabular { states: usize, actions: usize },
    Linear { inputs: usize, actions: usize },
    Mlp1 { inputs: usize, hidden: usize, actions: usize },
}

impl Arch {
    pub fn tag(&self) -> u8 {
        match self {
            Arch::Tabular { .. } => 1,
            Arch::Linear { .. } => 2,
            Arch::Mlp1 { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Tabular { .. } => "tabular",
            Arch::Linear { .. } => "linear",
            Arch::Mlp1 { .. } => "mlp1",
        }
    }

    pub fn actions(&self) -> usize {
        match *self {
            Arch::Tabular { actions, .. } | Arch::Linear { actions, .. } | Arch::Mlp1 { actions, .. } => {
                actions
            }
        }
    }

    /// Width of the observation vector the model consumes.
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::Tabular { states, .. } => states,
            Arch::Linear { inputs, .. } | Arch::Mlp1 { inputs, .. } => inputs,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Tabular { states, actions } => states * (actions + 1),
            Arch::Linear { inputs, actions } => actions * (inputs + 1) + inputs + 1,
            Arch::Mlp1 {
                inputs,
                hidden,
                actions,
            } => hidden * (inputs + 1) + actions * (hidden + 1) + hidden + 1,
        }
    }

    /// Model of the given kind (`tabular`, `linear`, `mlp1`) sized for an
    /// environment. Multi-agent players get a one-hot agent id appended to
    /// each observation; tabular models need one-hot (or empty) observations.
    pub fn for_spec(kind: &str, spec: &EnvSpec, hidden: usize) -> Result<Arch, PolicyError> {
        let id_width = if spec.agents_per_player > 1 { spec.agents_per_player } else { 0 };
        let inputs = spec.obs_dim + id_width;
        let actions = spec.action_dim;
        match kind {
            "tabular" if id_width == 0 && matches!(spec.env_id.name(), "chain_mdp" | "matrix_rps" | "matching_pennies") => {
                Ok(Arch::Tabular {
                    states: spec.obs_dim.max(1),
                    actions,
                })
            }
            "linear" => Ok(Arch::Linear { inputs, actions }),
            "mlp1" if (1..=64).contains(&hidden) => Ok(Arch::Mlp1 { inputs, hidden, actions }),
            _ => Err(PolicyError::UnsupportedArch(format!(
                "{kind} (hidden {hidden}) for {}",
                spec.env_id
            ))),
        }
    }

    /// Row index of a tabular observation: the hot entry of a one-hot
    /// vector; a single-state table also accepts the empty observation.
    pub fn tabular_state(states: usize, obs: &[f64]) -> Option<usize> {
        if states == 1 && obs.is_empty() {
            return Some(0);
        }
        if obs.len() != states {
            return None;
        }
        let mut hot = None;
        for (i, &x) in obs.iter().enumerate() {
            if x == 1.0 {
                if hot.is_some() {
                    return None;
                }
                hot = Some(i);
            } else if x != 0.0 {
                return None;
            }
        }
        hot
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub value: f64,
    state: usize,
    hidden: Vec<f64>,
}

pub fn forward(arch: &Arch, theta: &[f64], x: &[f64]) -> Result<Forward, PolicyError> {
    debug_assert_eq!(theta.len(), arch.param_count());
    match *arch {
        Arch::Tabular { states, actions } => {
            let s = Arch::tabular_state(states, x).ok_or(PolicyError::ShapeMismatch {
                expected: states,
                got: x.len(),
            })?;
            let row = &theta[s * (actions + 1)..(s + 1) * (actions + 1)];
            Ok(Forward {
                logits: row[..actions].to_vec(),
                value: row[actions],
                state: s,
                hidden: Vec::new(),
            })
        }
        Arch::Linear { inputs, actions } => {
            check_input(inputs, x)?;
            let (logits, value) = heads(theta, x, actions);
            Ok(Forward {
                logits,
                value,
                state: 0,
                hidden: Vec::new(),
            })
        }
        Arch::Mlp1 {
            inputs,
            hidden,
            actions,
        } => {
            check_input(inputs, x)?;
            let (w1, rest) = theta.split_at(hidden * inputs);
            let (b1, rest) = rest.split_at(hidden);
            let h: Vec<f64> = (0..hidden)
                .map(|j| (dot(&w1[j * inputs..(j + 1) * inputs], x) + b1[j]).tanh())
                .collect();
            let (logits, value) = heads(rest, &h, actions);
            Ok(Forward {
                logits,
                value,
                state: 0,
                hidden: h,
            })
        }
    }
}

/// Accumulate into `grad` the parameter gradient given upstream gradients
/// on the logits and on the value output.
pub fn backward(
    arch: &Arch,
    theta: &[f64],
    x: &[f64],
    fwd: &Forward,
    dlogits: &[f64],
    dvalue: f64,
    grad: &mut [f64],
) {
    match *arch {
        Arch::Tabular { actions, .. } => {
            let off = fwd.state * (actions + 1);
            for (g, d) in grad[off..off + actions].iter_mut().zip(dlogits) {
                *g += d;
            }
            grad[off + actions] += dvalue;
        }
        Arch::Linear { actions, .. } => {
            heads_backward(x, actions, dlogits, dvalue, grad);
        }
        Arch::Mlp1 {
            inputs,
            hidden,
            actions,
        } => {
            let trunk = hidden * (inputs + 1);
            let head = &theta[trunk..];
            let (g_trunk, g_head) = grad.split_at_mut(trunk);
            heads_backward(&fwd.hidden, actions, dlogits, dvalue, g_head);

            let w_pi = &head[..actions * hidden];
            let w_v = &head[actions * (hidden + 1)..actions * (hidden + 1) + hidden];
            let (g_w1, g_b1) = g_trunk.split_at_mut(hidden * inputs);
            for j in 0..hidden {
                let mut dh = dvalue * w_v[j];
                for (a, &dl) in dlogits.iter().enumerate() {
                    dh += dl * w_pi[a * hidden + j];
                }
                let dz = dh * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                g_b1[j] += dz;
                for (g, &xi) in g_w1[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                    *g += dz * xi;
                }
            }
        }
    }
}

fn check_input(inputs: usize, x: &[f64]) -> Result<(), PolicyError> {
    if x.len() != inputs {
        return Err(PolicyError::ShapeMismatch {
            expected: inputs,
            got: x.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear policy and value heads over feature vector `f`.
fn heads(theta: &[f64], f: &[f64], actions: usize) -> (Vec<f64>, f64) {
    let d = f.len();
    let (w_pi, rest) = theta.split_at(actions * d);
    let (b_pi, rest) = rest.split_at(actions);
    let (w_v, rest) = rest.split_at(d);
    let logits = (0..actions)
        .map(|a| dot(&w_pi[a * d..(a + 1) * d], f) + b_pi[a])
        .collect();
    (logits, dot(w_v, f) + rest[0])
}

fn heads_backward(f: &[f64], actions: usize, dlogits: &[f64], dvalue: f64, grad: &mut [f64]) {
    let d = f.len();
    let (g_w, rest) = grad.split_at_mut(actions * d);
    let (g_b, rest) = rest.split_at_mut(actions);
    let (g_wv, g_bv) = rest.split_at_mut(d);
    for a in 0..actions {
        g_b[a] += dlogits[a];
        for (g, &fi) in g_w[a * d..(a + 1) * d].iter_mut().zip(f) {
            *g += dlogits[a] * fi;
        }
    }
    for (g, &fi) in g_wv.iter_mut().zip(f) {
        *g += dvalue * fi;
    }
    g_bv[0] += dvalue;
}
