use rand::Rng;

use super::returns::check_gamma;
use super::{LearnError, Trajectory, Transition};
use crate::policy::{Arch, PolicyParameters};
use crate::PlayerId;

/// Added to every |TD error| so no entry ever becomes unsampleable.
pub const PRIORITY_FLOOR: f64 = 1e-3;

/// Tabular action values over one-hot observations.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub states: usize,
    pub actions: usize,
    /// Row-major `[state][action]`.
    pub q: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        QTable {
            states,
            actions,
            q: vec![0.0; states * actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.actions..(s + 1) * self.actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First action with the highest value among legal ones.
    pub fn greedy(&self, s: usize, mask: &[bool]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (a, &v) in self.row(s).iter().enumerate() {
            if mask.get(a).copied().unwrap_or(false) && best.is_none_or(|b| v > self.get(s, b)) {
                best = Some(a);
            }
        }
        best
    }

    pub fn state_of(&self, obs: &[f64]) -> Result<usize, LearnError> {
        Arch::tabular_state(self.states, obs).ok_or(LearnError::UnknownState)
    }

    /// Read a table stored in tabular policy parameters: logits hold Q.
    pub fn from_params(params: &PolicyParameters) -> Result<Self, LearnError> {
        let Arch::Tabular { states, actions } = params.arch else {
            return Err(LearnError::InvalidHyperparameter(format!(
                "q-learning needs a tabular model, got {}",
                params.arch.name()
            )));
        };
        let theta = params.as_f64();
        let mut q = Vec::with_capacity(states * actions);
        for s in 0..states {
            q.extend_from_slice(&theta[s * (actions + 1)..s * (actions + 1) + actions]);
        }
        Ok(QTable { states, actions, q })
    }

    /// Store as tabular parameters: logits = Q, value slot = max Q.
    pub fn to_params(&self, player_id: PlayerId, version: u64) -> PolicyParameters {
        let mut values = Vec::with_capacity(self.states * (self.actions + 1));
        for s in 0..self.states {
            values.extend(self.row(s).iter().map(|&v| v as f32));
            values.push(self.max(s) as f32);
        }
        let arch = Arch::Tabular {
            states: self.states,
            actions: self.actions,
        };
        PolicyParameters::new(player_id, version, arch, values).expect("layout matches arch")
    }
}

/// Sequential one-step Q-learning over `transitions`.
pub fn q_update(table: &QTable, transitions: &[Transition], alpha: f64, gamma: f64) -> Result<QTable, LearnError> {
    check_gamma(gamma)?;
    let mut out = table.clone();
    for t in transitions {
        let s = out.state_of(&t.obs)?;
        if t.action >= out.actions {
            return Err(LearnError::ShapeMismatch {
                expected: out.actions,
                got: t.action + 1,
            });
        }
        let next = if t.done { 0.0 } else { out.max(out.state_of(&t.next_obs)?) };
        let i = s * out.actions + t.action;
        out.q[i] += alpha * (t.reward + gamma * next - out.q[i]);
    }
    Ok(out)
}

/// Epsilon-greedy action over the legal set with its behavior log-probability.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    table: &QTable,
    state: usize,
    mask: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Result<(usize, f64), LearnError> {
    if state >= table.states {
        return Err(LearnError::UnknownState);
    }
    let legal: Vec<usize> = (0..table.actions).filter(|&a| mask.get(a).copied().unwrap_or(false)).collect();
    let greedy = table
        .greedy(state, mask)
        .ok_or(LearnError::Policy(crate::policy::PolicyError::AllActionsMasked))?;
    let action = if rng.gen::<f64>() < epsilon {
        legal[rng.gen_range(0..legal.len())]
    } else {
        greedy
    };
    let mut p = epsilon / legal.len() as f64;
    if action == greedy {
        p += 1.0 - epsilon;
    }
    Ok((action, p.ln().min(0.0)))
}

/// `|r + gamma max Q(s', .) (1 - done) - Q(s, a)| + floor`.
pub fn transition_priority(t: &Transition, table: &QTable, gamma: f64) -> Result<f64, LearnError> {
    let s = table.state_of(&t.obs)?;
    let next = if t.done { 0.0 } else { table.max(table.state_of(&t.next_obs)?) };
    let td = t.reward + gamma * next - table.get(s, t.action);
    Ok(td.abs() + PRIORITY_FLOOR)
}

/// Largest one-step |TD error| along a trajectory, from its recorded value
/// estimates, plus the floor.
pub fn trajectory_priority(traj: &Trajectory, gamma: f64) -> Result<f64, LearnError> {
    if traj.is_empty() {
        return Err(LearnError::EmptyTrajectory);
    }
    let n = traj.len();
    let mut worst: f64 = 0.0;
    for (i, t) in traj.transitions.iter().enumerate() {
        let next = if i + 1 < n {
            traj.transitions[i + 1].value_estimate
        } else if traj.is_terminal() {
            0.0
        } else {
            traj.bootstrap_value
        };
        worst = worst.max((t.reward + gamma * next - t.value_estimate).abs());
    }
    Ok(worst + PRIORITY_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::test_util::step;

    fn onehot(i: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    fn tr(s: usize, a: usize, r: f64, s2: usize, done: bool) -> Transition {
        let mut t = step(r, done, 0.0, -0.1);
        t.obs = onehot(s, 3);
        t.next_obs = onehot(s2, 3);
        t.action = a;
        t
    }

    #[test]
    fn terminal_one_step_target() {
        let q = q_update(&QTable::zeros(3, 2), &[tr(0, 1, 1.0, 1, true)], 1.0, 0.9).unwrap();
        assert_eq!(q.get(0, 1), 1.0);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let mut q = QTable::zeros(3, 2);
        q.q = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let out = q_update(&q, &[tr(0, 1, 1.0, 2, false), tr(2, 0, -1.0, 1, true)], 0.0, 0.9).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn unknown_state() {
        let mut t = tr(0, 0, 0.0, 1, false);
        t.obs = vec![0.5, 0.5, 0.0];
        assert_eq!(q_update(&QTable::zeros(3, 2), &[t], 0.1, 0.9), Err(LearnError::UnknownState));
    }

    #[test]
    fn priorities() {
        let q = QTable::zeros(3, 2);
        assert!((transition_priority(&tr(0, 0, 0.0, 1, false), &q, 0.9).unwrap() - 1e-3).abs() < 1e-15);
        assert!((transition_priority(&tr(0, 0, 1.0, 1, true), &q, 0.3).unwrap() - 1.001).abs() < 1e-12);
        let traj = Trajectory::new(vec![step(1.0, true, 0.0, -0.1)], 0.0).unwrap();
        assert!((trajectory_priority(&traj, 0.5).unwrap() - 1.001).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let mut q = QTable::zeros(2, 2);
        q.q = vec![0.5, -0.25, 1.0, 2.0];
        let p = q.to_params("p".into(), 4);
        assert_eq!(p.values(), &[0.5, -0.25, 0.5, 1.0, 2.0, 2.0]);
        assert_eq!(QTable::from_params(&p).unwrap(), q);
    }

    #[test]
    fn epsilon_greedy_log_probs() {
        let mut q = QTable::zeros(1, 3);
        q.q = vec![0.0, 1.0, 0.5];
        let mut rng = crate::seed::rng(1);
        let (a, lp) = epsilon_greedy(&q, 0, &[true, true, true], 0.0, &mut rng).unwrap();
        assert_eq!((a, lp), (1, 0.0));
        let (a, lp) = epsilon_greedy(&q, 0, &[true, false, true], 0.0, &mut rng).unwrap();
        assert_eq!((a, lp), (2, 0.0));
        for _ in 0..50 {
            let (a, lp) = epsilon_greedy(&q, 0, &[true, true, true], 0.3, &mut rng).unwrap();
            let expected = if a == 1 { 0.1 + 0.7 } else { 0.1 };
            assert!((lp - f64::ln(expected)).abs() < 1e-12);
        }
    }
}
