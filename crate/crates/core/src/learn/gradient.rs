use super::returns::{check_gamma, nstep_returns, vtrace};
use super::{Algorithm, LearnConfig, LearnError, Trajectory, Transition};
use crate::policy::{backward, forward, ActionDistribution, GradientUpdate, PolicyParameters};

/// Surrogate maximized for the taken action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyObjective {
    /// `log pi(a|s) * A`.
    Vanilla,
    /// Clipped ratio objective, bounded below by `dual_clip_c * A` when `A < 0`.
    DualClip { clip_eps: f64, dual_clip_c: f64 },
}

/// One row of an actor-critic batch with its fixed targets.
#[derive(Clone, Copy, Debug)]
pub struct LossSample<'a> {
    pub transition: &'a Transition,
    pub value_target: f64,
    /// Held constant (no gradient flows through it).
    pub advantage: f64,
}

/// Per-sample dual-clip objective and its derivative with respect to the ratio.
pub fn dual_clip_objective(ratio: f64, advantage: f64, clip_eps: f64, dual_clip_c: f64) -> (f64, f64) {
    let lo = 1.0 - clip_eps;
    let hi = 1.0 + clip_eps;
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(lo, hi) * advantage;
    let inside = ratio > lo && ratio < hi;
    let (mut obj, mut d) = if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, if inside { advantage } else { 0.0 })
    };
    if advantage < 0.0 && dual_clip_c * advantage > obj {
        obj = dual_clip_c * advantage;
        d = 0.0;
    }
    (obj, d)
}

/// Summed loss and gradient of
/// `sum_i [-objective_i + value_coef (target_i - V_i)^2 - entropy_coef H_i]`.
pub fn actor_critic_gradient(
    params: &PolicyParameters,
    samples: &[LossSample<'_>],
    objective: PolicyObjective,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<(f64, Vec<f64>), LearnError> {
    if samples.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let theta = params.as_f64();
    let arch = &params.arch;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; arch.actions()];
    for s in samples {
        let t = s.transition;
        let fwd = forward(arch, theta, &t.obs)?;
        let dist = ActionDistribution::masked_softmax(&fwd.logits, &t.mask)?;
        let logp = dist.log_probs[t.action];

        let (obj, dobj_dlogp) = match objective {
            PolicyObjective::Vanilla => (logp * s.advantage, s.advantage),
            PolicyObjective::DualClip {
                clip_eps,
                dual_clip_c,
            } => {
                let ratio = (logp - t.behavior_log_prob).exp();
                let (obj, d_ratio) = dual_clip_objective(ratio, s.advantage, clip_eps, dual_clip_c);
                (obj, d_ratio * ratio)
            }
        };
        let entropy = dist.entropy();
        let value_err = s.value_target - fwd.value;
        loss += -obj + value_coef * value_err * value_err - entropy_coef * entropy;

        for (j, d) in dlogits.iter_mut().enumerate() {
            let p = dist.probs[j];
            if !t.mask[j] {
                *d = 0.0;
                continue;
            }
            let dlogp = f64::from(u8::from(j == t.action)) - p;
            let dentropy = -p * (dist.log_probs[j] + entropy);
            *d = -dobj_dlogp * dlogp - entropy_coef * dentropy;
        }
        let dvalue = -2.0 * value_coef * value_err;
        backward(arch, theta, &t.obs, &fwd, &dlogits, dvalue, &mut grad);
    }
    Ok((loss, grad))
}

fn update(params: &PolicyParameters, grad: Vec<f64>, n: usize) -> GradientUpdate {
    GradientUpdate {
        grad,
        base_version: params.version,
        sample_count: n as u32,
        producer_id: String::new(),
    }
}

/// Samples with n-step value targets and `R - V` advantages, `V` from the
/// current parameters.
fn nstep_samples<'a>(
    params: &PolicyParameters,
    batch: &'a [Trajectory],
    gamma: f64,
) -> Result<Vec<LossSample<'a>>, LearnError> {
    check_gamma(gamma)?;
    let mut samples = Vec::new();
    for traj in batch {
        if traj.is_empty() {
            continue;
        }
        let returns = nstep_returns(traj, gamma)?;
        for (t, r) in traj.transitions.iter().zip(returns) {
            let v = forward(&params.arch, params.as_f64(), &t.obs)?.value;
            samples.push(LossSample {
                transition: t,
                value_target: r,
                advantage: r - v,
            });
        }
    }
    if samples.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    Ok(samples)
}

/// Advantage actor-critic gradient over the batch.
pub fn a2c_gradient(
    params: &PolicyParameters,
    batch: &[Trajectory],
    gamma: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<GradientUpdate, LearnError> {
    let samples = nstep_samples(params, batch, gamma)?;
    let (_, grad) = actor_critic_gradient(params, &samples, PolicyObjective::Vanilla, value_coef, entropy_coef)?;
    Ok(update(params, grad, samples.len()))
}

/// Dual-clip PPO gradient; ratios are taken against each transition's
/// behavior log-probability.
pub fn ppo_dualclip_gradient(
    params: &PolicyParameters,
    batch: &[Trajectory],
    cfg: &LearnConfig,
) -> Result<GradientUpdate, LearnError> {
    if !(cfg.dual_clip_c > 1.0) {
        return Err(LearnError::InvalidDualClip(cfg.dual_clip_c));
    }
    if !(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0) {
        return Err(LearnError::InvalidHyperparameter(format!("clip_eps {} outside (0, 1)", cfg.clip_eps)));
    }
    let samples = nstep_samples(params, batch, cfg.gamma)?;
    let objective = PolicyObjective::DualClip {
        clip_eps: cfg.clip_eps,
        dual_clip_c: cfg.dual_clip_c,
    };
    let (_, grad) = actor_critic_gradient(params, &samples, objective, cfg.value_coef, cfg.entropy_coef)?;
    Ok(update(params, grad, samples.len()))
}

/// Actor-critic gradient with V-trace corrected targets and advantages,
/// values and target log-probabilities from the current parameters.
pub fn vtrace_gradient(
    params: &PolicyParameters,
    batch: &[Trajectory],
    cfg: &LearnConfig,
) -> Result<GradientUpdate, LearnError> {
    let theta = params.as_f64();
    let mut samples = Vec::new();
    for traj in batch {
        if traj.is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(traj.len());
        let mut log_ratios = Vec::with_capacity(traj.len());
        for t in &traj.transitions {
            let fwd = forward(&params.arch, theta, &t.obs)?;
            let dist = ActionDistribution::masked_softmax(&fwd.logits, &t.mask)?;
            values.push(fwd.value);
            log_ratios.push(dist.log_probs[t.action] - t.behavior_log_prob);
        }
        let last = traj.transitions.last().expect("nonempty");
        let bootstrap = if traj.is_terminal() {
            0.0
        } else {
            forward(&params.arch, theta, &last.next_obs)?.value
        };
        let out = vtrace(
            &traj.rewards(),
            &values,
            bootstrap,
            &log_ratios,
            cfg.gamma,
            cfg.rho_bar,
            cfg.c_bar,
        )?;
        for (i, t) in traj.transitions.iter().enumerate() {
            samples.push(LossSample {
                transition: t,
                value_target: out.vs[i],
                advantage: out.pg_advantages[i],
            });
        }
    }
    if samples.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let (_, grad) = actor_critic_gradient(params, &samples, PolicyObjective::Vanilla, cfg.value_coef, cfg.entropy_coef)?;
    Ok(update(params, grad, samples.len()))
}

/// The policy-gradient step used by every actor-critic topology: V-trace
/// corrected A2C, or dual-clip PPO.
pub fn train_gradient(
    params: &PolicyParameters,
    batch: &[Trajectory],
    cfg: &LearnConfig,
) -> Result<GradientUpdate, LearnError> {
    match cfg.algorithm {
        Algorithm::A2c => vtrace_gradient(params, batch, cfg),
        Algorithm::Ppo => ppo_dualclip_gradient(params, batch, cfg),
        Algorithm::Q => Err(LearnError::InvalidHyperparameter(
            "q-learning has no policy gradient".into(),
        )),
    }
}
