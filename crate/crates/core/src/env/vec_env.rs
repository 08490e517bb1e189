use super::{make_env, ActionId, EnvError, EnvId, EnvSpec, Environment, JointObservation, StepResult};
use crate::seed;

/// Outcome of one sub-environment inside a vectorized step.
#[derive(Clone, Debug, PartialEq)]
pub struct VecStepResult {
    /// Rewards and `done` as emitted by the sub-environment. When `done` is
    /// set, `result.observations` already holds the fresh reset observation.
    pub result: StepResult,
    /// Last observation of the finished episode, present only when `done`.
    pub terminal_observations: Option<Vec<JointObservation>>,
    /// Episode counter of the sub-environment before this step.
    pub episode: u64,
}

/// A batch of independent copies of one environment, advanced in lockstep.
///
/// Finished copies reset themselves with a seed derived from the base seed,
/// the copy index and the episode counter, so callers never see a dead env.
pub struct VecEnv {
    envs: Vec<Box<dyn Environment>>,
    base_seed: u64,
    episodes: Vec<u64>,
    current: Vec<Vec<JointObservation>>,
}

impl VecEnv {
    pub fn new(env_id: EnvId, copies: usize, base_seed: u64) -> Self {
        Self::from_envs((0..copies).map(|_| make_env(env_id)).collect(), base_seed)
    }

    pub fn from_envs(mut envs: Vec<Box<dyn Environment>>, base_seed: u64) -> Self {
        let current = envs
            .iter_mut()
            .enumerate()
            .map(|(i, env)| env.reset(Self::episode_seed(base_seed, i, 0)))
            .collect();
        let episodes = vec![0; envs.len()];
        VecEnv {
            envs,
            base_seed,
            episodes,
            current,
        }
    }

    fn episode_seed(base: u64, index: usize, episode: u64) -> u64 {
        seed::derive(seed::derive(base, index as u64), episode)
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn spec(&self) -> &EnvSpec {
        self.envs[0].spec()
    }

    /// Current observation of every copy: `[copy][player]`.
    pub fn observations(&self) -> &[Vec<JointObservation>] {
        &self.current
    }

    pub fn episodes(&self) -> &[u64] {
        &self.episodes
    }

    /// Step every copy once with `batched_actions[copy][player][agent]`.
    pub fn vector_step(
        &mut self,
        batched_actions: &[Vec<Vec<ActionId>>],
    ) -> Result<Vec<VecStepResult>, EnvError> {
        if batched_actions.len() != self.envs.len() {
            return Err(EnvError::BatchSizeMismatch {
                expected: self.envs.len(),
                got: batched_actions.len(),
            });
        }
        let mut out = Vec::with_capacity(self.envs.len());
        for (i, (env, actions)) in self.envs.iter_mut().zip(batched_actions).enumerate() {
            let mut result = env.step(actions)?;
            let episode = self.episodes[i];
            let terminal_observations = if result.done {
                self.episodes[i] += 1;
                let fresh = env.reset(Self::episode_seed(self.base_seed, i, self.episodes[i]));
                Some(std::mem::replace(&mut result.observations, fresh))
            } else {
                None
            };
            self.current[i] = result.observations.clone();
            out.push(VecStepResult {
                result,
                terminal_observations,
                episode,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainMdp, CHAIN_RIGHT};

    #[test]
    fn identical_copies_step_identically() {
        let mut v = VecEnv::new(EnvId::ChainMdp, 8, 0);
        let acts = vec![vec![vec![CHAIN_RIGHT]]; 8];
        let out = v.vector_step(&acts).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn finished_copy_auto_resets() {
        let mut envs: Vec<Box<dyn Environment>> = Vec::new();
        for i in 0..4 {
            let mut e = ChainMdp::default();
            if i == 2 {
                e.set_state(3);
            }
            envs.push(Box::new(e));
        }
        let mut v = VecEnv {
            current: envs.iter().map(|e| e.observe()).collect(),
            episodes: vec![0; 4],
            envs,
            base_seed: 5,
        };
        let out = v.vector_step(&vec![vec![vec![CHAIN_RIGHT]]; 4]).unwrap();
        assert!(out[2].result.done);
        assert_eq!(out[2].result.rewards[0][0], 1.0);
        assert_eq!(
            out[2].result.observations[0].per_agent_obs[0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0]
        );
        let terminal = out[2].terminal_observations.as_ref().unwrap();
        assert_eq!(terminal[0].per_agent_obs[0][4], 1.0);
        assert_eq!(v.episodes(), &[0, 0, 1, 0]);
        for i in [0, 1, 3] {
            assert!(!out[i].result.done);
            assert!(out[i].terminal_observations.is_none());
        }
    }

    #[test]
    fn batch_size_mismatch() {
        let mut v = VecEnv::new(EnvId::ChainMdp, 4, 0);
        let err = v.vector_step(&vec![vec![vec![CHAIN_RIGHT]]; 3]).unwrap_err();
        assert_eq!(err, EnvError::BatchSizeMismatch { expected: 4, got: 3 });
    }

    #[test]
    fn grid_copies_get_distinct_reset_seeds() {
        let v = VecEnv::new(EnvId::GridCapture, 6, 42);
        let w = VecEnv::new(EnvId::GridCapture, 6, 42);
        assert_eq!(v.observations(), w.observations());
        let distinct = v.observations().iter().skip(1).any(|o| o != &v.observations()[0]);
        assert!(distinct);
    }
}
