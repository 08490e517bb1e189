//! Versioned policy/value models with pure inference and plain SGD.
//!
//! A [`PolicyParameters`] snapshot is immutable once built: updates always
//! produce a fresh snapshot with the next version number. Values are stored
//! as `f32` (the wire precision) and evaluated in `f64`.

mod codec;
mod model;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;
use crate::PlayerId;

pub use codec::{decode_gradient, deserialize_params, encode_gradient, serialize_params};
pub use model::{backward, forward, Arch, Forward};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("every action is masked")]
    AllActionsMasked,
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("corrupt parameter payload: {0}")]
    CorruptPayload(String),
    #[error("unsupported model: {0}")]
    UnsupportedArch(String),
    #[error("payload declares arch tag {found} with {count} values, expected {expected}")]
    ArchMismatch {
        expected: String,
        found: u8,
        count: usize,
    },
}

/// Immutable, versioned parameter snapshot of one player's model.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParameters {
    pub player_id: PlayerId,
    pub version: u64,
    pub arch: Arch,
    values: Vec<f32>,
    wide: Vec<f64>,
}

impl PolicyParameters {
    pub fn new(player_id: PlayerId, version: u64, arch: Arch, values: Vec<f32>) -> Result<Self, PolicyError> {
        if values.len() != arch.param_count() {
            return Err(PolicyError::ShapeMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        let wide = values.iter().map(|&v| f64::from(v)).collect();
        Ok(PolicyParameters {
            player_id,
            version,
            arch,
            values,
            wide,
        })
    }

    /// Version-1 snapshot with every value drawn from uniform(-0.05, 0.05).
    pub fn init(player_id: PlayerId, arch: Arch, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let values = (0..arch.param_count())
            .map(|_| rng.gen_range(-0.05f32..0.05f32))
            .collect();
        Self::new(player_id, 1, arch, values).expect("init matches arch")
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Values widened to `f64`, the precision all model math runs in.
    pub fn as_f64(&self) -> &[f64] {
        &self.wide
    }

    /// Same values under a different version stamp.
    pub fn with_version(&self, version: u64) -> Self {
        PolicyParameters {
            version,
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the wire encoding.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(serialize_params(self)))
    }
}

/// Masked categorical distribution over the action set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    /// `-inf` for masked actions.
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Softmax restricted to legal actions; masked entries get probability 0.
    pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Self, PolicyError> {
        if logits.len() != mask.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: logits.len(),
                got: mask.len(),
            });
        }
        let max = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(PolicyError::AllActionsMasked);
        }
        let log_z = max
            + logits
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&l, _)| (l - max).exp())
                .sum::<f64>()
                .ln();
        let log_probs: Vec<f64> = logits
            .iter()
            .zip(mask)
            .map(|(&l, &m)| if m { l - log_z } else { f64::NEG_INFINITY })
            .collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(ActionDistribution { probs, log_probs })
    }

    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(&p, _)| p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum()
    }

    /// Inverse-CDF draw using one uniform variate; never returns an action
    /// with zero probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_legal = 0;
        for (a, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            last_legal = a;
            acc += p;
            if u < acc {
                return a;
            }
        }
        last_legal
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (a, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = a;
            }
        }
        best
    }
}

/// Result of one inference call.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub dist: ActionDistribution,
}

/// Evaluate the policy and value heads and sample an action.
pub fn infer<R: Rng + ?Sized>(
    params: &PolicyParameters,
    observation: &[f64],
    mask: &[bool],
    rng: &mut R,
) -> Result<Inference, PolicyError> {
    let (fwd, dist) = evaluate(params, observation, mask)?;
    let action = dist.sample(rng);
    Ok(Inference {
        action,
        log_prob: dist.log_probs[action],
        value: fwd.value,
        dist,
    })
}

/// Deterministic part of inference: forward pass plus masked softmax.
pub fn evaluate(
    params: &PolicyParameters,
    observation: &[f64],
    mask: &[bool],
) -> Result<(Forward, ActionDistribution), PolicyError> {
    if mask.len() != params.arch.actions() {
        return Err(PolicyError::ShapeMismatch {
            expected: params.arch.actions(),
            got: mask.len(),
        });
    }
    let fwd = forward(&params.arch, params.as_f64(), observation)?;
    let dist = ActionDistribution::masked_softmax(&fwd.logits, mask)?;
    Ok((fwd, dist))
}

/// Policy input for one agent: its features, followed by a one-hot agent id
/// when several agents share one parameter set.
pub fn agent_input(obs: &[f64], agent: usize, agents: usize, with_id: bool) -> Vec<f64> {
    let mut x = obs.to_vec();
    if with_id && agents > 1 {
        x.extend((0..agents).map(|a| if a == agent { 1.0 } else { 0.0 }));
    }
    x
}

/// Summed per-sample gradient; dividing by `sample_count` gives the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientUpdate {
    pub grad: Vec<f64>,
    pub base_version: u64,
    pub sample_count: u32,
    pub producer_id: String,
}

impl GradientUpdate {
    /// Per-sample (mean) gradient.
    pub fn mean_grad(&self) -> Vec<f64> {
        let n = f64::from(self.sample_count.max(1));
        self.grad.iter().map(|g| g / n).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }
}

/// One SGD step: `values - learning_rate * grad / sample_count`, version + 1.
pub fn apply_gradient(
    params: &PolicyParameters,
    update: &GradientUpdate,
    learning_rate: f64,
) -> Result<PolicyParameters, PolicyError> {
    if update.grad.len() != params.values.len() {
        return Err(PolicyError::ShapeMismatch {
            expected: params.values.len(),
            got: update.grad.len(),
        });
    }
    if !update.is_finite() {
        return Err(PolicyError::NonFiniteGradient);
    }
    let n = f64::from(update.sample_count.max(1));
    let values = params
        .wide
        .iter()
        .zip(&update.grad)
        .map(|(&v, &g)| (v - learning_rate * g / n) as f32)
        .collect();
    PolicyParameters::new(params.player_id.clone(), params.version + 1, params.arch, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tab(states: usize, actions: usize, values: Vec<f32>) -> PolicyParameters {
        PolicyParameters::new("p".into(), 1, Arch::Tabular { states, actions }, values).unwrap()
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = tab(1, 3, vec![0.0; 4]);
        let (_, d) = evaluate(&p, &[], &[true; 3]).unwrap();
        for q in d.probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_renormalizes() {
        let p = tab(1, 3, vec![0.0; 4]);
        let (_, d) = evaluate(&p, &[], &[true, false, true]).unwrap();
        assert_eq!(d.probs[1], 0.0);
        assert!((d.probs[0] - 0.5).abs() < 1e-12 && (d.probs[2] - 0.5).abs() < 1e-12);
        assert_eq!(d.log_probs[1], f64::NEG_INFINITY);
    }

    #[test]
    fn all_masked_is_an_error() {
        let p = tab(1, 2, vec![0.0; 3]);
        let mut rng = seed::rng(0);
        assert_eq!(
            infer(&p, &[], &[false, false], &mut rng),
            Err(PolicyError::AllActionsMasked)
        );
        assert!(matches!(
            infer(&p, &[1.0, 0.0], &[true, true], &mut rng),
            Err(PolicyError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn inference_is_pure_given_rng_state() {
        let arch = Arch::Linear { inputs: 3, actions: 4 };
        let p = PolicyParameters::init("p".into(), arch, 9);
        let obs = [0.3, -1.0, 2.0];
        let a = infer(&p, &obs, &[true; 4], &mut seed::rng(17)).unwrap();
        let b = infer(&p, &obs, &[true; 4], &mut seed::rng(17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_actions_never_sampled() {
        let p = tab(1, 3, vec![5.0, 0.0, -5.0, 0.0]);
        let mut rng = seed::rng(1);
        let mask = [false, true, true];
        for _ in 0..100_000 {
            let inf = infer(&p, &[], &mask, &mut rng).unwrap();
            assert_ne!(inf.action, 0);
        }
    }

    #[test]
    fn distribution_invariants() {
        let d = ActionDistribution::masked_softmax(&[1.0, -2.0, 0.5, 3.0], &[true, true, false, true]).unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (p, lp) in d.probs.iter().zip(&d.log_probs) {
            assert!(*p >= 0.0);
            assert!((lp.exp() - p).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_only_bumps_version() {
        let p = PolicyParameters::init("p".into(), Arch::Linear { inputs: 2, actions: 2 }, 3);
        let g = GradientUpdate {
            grad: vec![0.0; p.values().len()],
            base_version: 1,
            sample_count: 1,
            producer_id: "a".into(),
        };
        let q = apply_gradient(&p, &g, 0.5).unwrap();
        assert_eq!(q.values(), p.values());
        assert_eq!(q.version, p.version + 1);
    }

    #[test]
    fn gradient_equal_to_values_zeroes_them() {
        let p = PolicyParameters::init("p".into(), Arch::Tabular { states: 2, actions: 2 }, 4);
        let g = GradientUpdate {
            grad: p.as_f64().to_vec(),
            base_version: 1,
            sample_count: 1,
            producer_id: "a".into(),
        };
        let q = apply_gradient(&p, &g, 1.0).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
        assert_eq!(p.version, 1, "old snapshot untouched");
    }

    #[test]
    fn successive_updates_commute() {
        let p = tab(1, 2, vec![0.5, -0.25, 1.0]);
        let g1 = GradientUpdate {
            grad: vec![0.125, 0.25, -0.5],
            base_version: 1,
            sample_count: 1,
            producer_id: "a".into(),
        };
        let g2 = GradientUpdate {
            grad: vec![-0.0625, 0.5, 0.25],
            sample_count: 2,
            ..g1.clone()
        };
        let ab = apply_gradient(&apply_gradient(&p, &g1, 0.5).unwrap(), &g2, 0.5).unwrap();
        let ba = apply_gradient(&apply_gradient(&p, &g2, 0.5).unwrap(), &g1, 0.5).unwrap();
        assert_eq!(ab.values(), ba.values());
        assert_eq!(ab.version, p.version + 2);
    }

    #[test]
    fn rejects_bad_updates() {
        let p = tab(1, 2, vec![0.0; 3]);
        let mut g = GradientUpdate {
            grad: vec![0.0; 2],
            base_version: 1,
            sample_count: 1,
            producer_id: "a".into(),
        };
        assert!(matches!(apply_gradient(&p, &g, 1.0), Err(PolicyError::ShapeMismatch { .. })));
        g.grad = vec![0.0, f64::NAN, 0.0];
        assert_eq!(apply_gradient(&p, &g, 1.0), Err(PolicyError::NonFiniteGradient));
    }

    #[test]
    fn agent_id_features() {
        assert_eq!(agent_input(&[0.5], 1, 3, true), vec![0.5, 0.0, 1.0, 0.0]);
        assert_eq!(agent_input(&[0.5], 0, 1, true), vec![0.5]);
        assert_eq!(agent_input(&[0.5], 1, 3, false), vec![0.5]);
    }
}
