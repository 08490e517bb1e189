use super::{LearnError, Trajectory};

/// Discounted n-step returns bootstrapped from the trajectory's tail value
/// (zero when the trajectory ends its episode).
pub fn nstep_returns(traj: &Trajectory, gamma: f64) -> Result<Vec<f64>, LearnError> {
    if traj.is_empty() {
        return Err(LearnError::EmptyTrajectory);
    }
    check_gamma(gamma)?;
    let mut acc = if traj.is_terminal() { 0.0 } else { traj.bootstrap_value };
    let mut out = vec![0.0; traj.len()];
    for (i, t) in traj.transitions.iter().enumerate().rev() {
        acc = t.reward + gamma * acc;
        out[i] = acc;
    }
    Ok(out)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<(), LearnError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LearnError::InvalidHyperparameter(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VtraceOutput {
    /// Value targets `v_t`.
    pub vs: Vec<f64>,
    /// Policy-gradient advantages `rho_t (r_t + gamma v_{t+1} - V_t)`.
    pub pg_advantages: Vec<f64>,
}

/// Truncated importance-weighted value targets.
///
/// `values[t]` is `V(x_t)`, `bootstrap` is `V(x_T)` (pass 0 for terminal
/// segments), `log_ratios[t]` is `log pi(a_t|x_t) - log mu(a_t|x_t)`.
pub fn vtrace(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    log_ratios: &[f64],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> Result<VtraceOutput, LearnError> {
    let n = rewards.len();
    if n == 0 {
        return Err(LearnError::EmptyTrajectory);
    }
    for len in [values.len(), log_ratios.len()] {
        if len != n {
            return Err(LearnError::ShapeMismatch { expected: n, got: len });
        }
    }
    if !(c_bar > 0.0 && rho_bar >= c_bar) {
        return Err(LearnError::InvalidHyperparameter(format!(
            "need rho_bar >= c_bar > 0, got rho_bar={rho_bar} c_bar={c_bar}"
        )));
    }
    check_gamma(gamma)?;

    let mut rhos = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for (t, &lr) in log_ratios.iter().enumerate() {
        let ratio = lr.exp();
        if !ratio.is_finite() || ratio.is_nan() {
            return Err(LearnError::NonFiniteRatio(t));
        }
        rhos.push(ratio.min(rho_bar));
        cs.push(ratio.min(c_bar));
    }

    let next_value = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let mut vs = vec![0.0; n];
    // v_{t+1} - V_{t+1}; zero past the end since v_T = V_T = bootstrap.
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let delta = rhos[t] * (rewards[t] + gamma * next_value(t) - values[t]);
        carry = delta + gamma * cs[t] * carry;
        vs[t] = values[t] + carry;
    }
    let pg_advantages = (0..n)
        .map(|t| {
            let v_next = if t + 1 < n { vs[t + 1] } else { bootstrap };
            rhos[t] * (rewards[t] + gamma * v_next - values[t])
        })
        .collect();
    Ok(VtraceOutput { vs, pg_advantages })
}

/// V-trace over a recorded trajectory, using its stored value estimates and
/// behavior log-probabilities.
pub fn vtrace_targets(
    traj: &Trajectory,
    target_log_probs: &[f64],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> Result<VtraceOutput, LearnError> {
    if traj.is_empty() {
        return Err(LearnError::EmptyTrajectory);
    }
    if target_log_probs.len() != traj.len() {
        return Err(LearnError::ShapeMismatch {
            expected: traj.len(),
            got: target_log_probs.len(),
        });
    }
    let rewards = traj.rewards();
    let values: Vec<f64> = traj.transitions.iter().map(|t| t.value_estimate).collect();
    let log_ratios: Vec<f64> = traj
        .transitions
        .iter()
        .zip(target_log_probs)
        .map(|(t, lp)| lp - t.behavior_log_prob)
        .collect();
    if let Some(i) = log_ratios.iter().position(|x| x.is_nan()) {
        return Err(LearnError::NonFiniteRatio(i));
    }
    let bootstrap = if traj.is_terminal() { 0.0 } else { traj.bootstrap_value };
    vtrace(&rewards, &values, bootstrap, &log_ratios, gamma, rho_bar, c_bar)
}
