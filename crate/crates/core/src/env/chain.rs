use std::collections::BTreeMap;

use super::{check_actions, ActionId, EnvError, EnvId, EnvSpec, Environment, JointObservation, StepResult};

pub const CHAIN_LEFT: ActionId = 0;
pub const CHAIN_RIGHT: ActionId = 1;

/// Single-agent chain: start at the leftmost state, `right` moves toward the
/// goal, `left` moves back (or stays at the wall). Entering the last state
/// pays +1 and ends the episode; every other transition pays 0.
#[derive(Clone, Debug)]
pub struct ChainMdp {
    spec: EnvSpec,
    state: usize,
    steps: u32,
    done: bool,
}

impl Default for ChainMdp {
    fn default() -> Self {
        ChainMdp::new(5, 20)
    }
}

impl ChainMdp {
    pub fn new(states: usize, max_episode_steps: u32) -> Self {
        assert!(states >= 2, "chain needs at least two states");
        ChainMdp {
            spec: EnvSpec {
                env_id: EnvId::ChainMdp,
                players: 1,
                agents_per_player: 1,
                obs_dim: states,
                action_dim: 2,
                max_episode_steps,
            },
            state: 0,
            steps: 0,
            done: false,
        }
    }

    pub fn states(&self) -> usize {
        self.spec.obs_dim
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Deterministic dynamics: `(next_state, reward, terminal)`.
    pub fn transition(&self, state: usize, action: ActionId) -> (usize, f64, bool) {
        let goal = self.states() - 1;
        let next = match action {
            CHAIN_RIGHT => (state + 1).min(goal),
            _ => state.saturating_sub(1),
        };
        if next == goal {
            (next, 1.0, true)
        } else {
            (next, 0.0, false)
        }
    }

    /// Place the agent in `state` mid-episode (used for exhaustive checks).
    pub fn set_state(&mut self, state: usize) {
        assert!(state < self.states());
        self.state = state;
        self.done = state == self.states() - 1;
    }

    fn obs(&self) -> JointObservation {
        let mut one_hot = vec![0.0; self.states()];
        one_hot[self.state] = 1.0;
        JointObservation {
            per_agent_obs: vec![one_hot],
            action_mask: vec![vec![!self.done; 2]],
            episode_step: self.steps,
        }
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<JointObservation> {
        self.state = 0;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, joint_actions: &[Vec<ActionId>]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        check_actions(&self.spec, &self.observe(), joint_actions)?;
        let (next, reward, terminal) = self.transition(self.state, joint_actions[0][0]);
        self.state = next;
        self.steps += 1;
        self.done = terminal || self.steps >= self.spec.max_episode_steps;
        Ok(StepResult {
            observations: self.observe(),
            rewards: vec![vec![reward]],
            done: self.done,
            info: BTreeMap::new(),
        })
    }

    fn observe(&self) -> Vec<JointObservation> {
        vec![self.obs()]
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
