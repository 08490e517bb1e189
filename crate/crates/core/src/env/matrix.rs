use std::collections::BTreeMap;

use super::{check_actions, ActionId, EnvError, EnvId, EnvSpec, Environment, JointObservation, StepResult};

pub const ROCK: ActionId = 0;
pub const PAPER: ActionId = 1;
pub const SCISSORS: ActionId = 2;

/// Two-player, one-shot, zero-sum matrix game with an empty observation.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: EnvSpec,
    /// Row player's payoff; the column player receives the negation.
    payoff: Vec<Vec<f64>>,
    done: bool,
}

impl MatrixGame {
    pub fn rps() -> Self {
        let payoff = vec![
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ];
        Self::new(EnvId::MatrixRps, payoff)
    }

    pub fn matching_pennies() -> Self {
        Self::new(EnvId::MatchingPennies, vec![vec![1.0, -1.0], vec![-1.0, 1.0]])
    }

    fn new(env_id: EnvId, payoff: Vec<Vec<f64>>) -> Self {
        let spec = EnvSpec {
            env_id,
            players: 2,
            agents_per_player: 1,
            obs_dim: 0,
            action_dim: payoff.len(),
            max_episode_steps: 1,
        };
        MatrixGame {
            spec,
            payoff,
            done: false,
        }
    }

    /// Payoff of the row player when the row plays `a` and the column plays `b`.
    pub fn payoff(&self, a: ActionId, b: ActionId) -> f64 {
        self.payoff[a][b]
    }

    /// Win rate of the best pure response against a mixed strategy, computed
    /// exhaustively over the response actions.
    ///
    /// The game is symmetric for both built-in matrices, so the row payoff
    /// describes either seat.
    pub fn best_response_win_rate(&self, opponent_probs: &[f64]) -> f64 {
        (0..self.spec.action_dim)
            .map(|a| {
                opponent_probs
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| self.payoff[a][b] > 0.0)
                    .map(|(_, p)| p)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn observation(&self) -> JointObservation {
        JointObservation {
            per_agent_obs: vec![Vec::new()],
            action_mask: vec![vec![!self.done; self.spec.action_dim]],
            episode_step: u32::from(self.done),
        }
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<JointObservation> {
        self.done = false;
        self.observe()
    }

    fn step(&mut self, joint_actions: &[Vec<ActionId>]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        check_actions(&self.spec, &self.observe(), joint_actions)?;
        let r = self.payoff[joint_actions[0][0]][joint_actions[1][0]];
        self.done = true;
        Ok(StepResult {
            observations: self.observe(),
            rewards: vec![vec![r], vec![-r]],
            done: true,
            info: BTreeMap::new(),
        })
    }

    fn observe(&self) -> Vec<JointObservation> {
        vec![self.observation(); 2]
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
