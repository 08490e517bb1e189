//! Learning mathematics: returns, V-trace, actor-critic gradients, tabular
//! Q-learning and replay priorities. Everything here is a pure function.

mod gradient;
mod qlearn;
mod returns;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyError;
use crate::PlayerId;

pub use gradient::{
    a2c_gradient, actor_critic_gradient, dual_clip_objective, ppo_dualclip_gradient, train_gradient,
    vtrace_gradient, LossSample, PolicyObjective,
};
pub use qlearn::{
    epsilon_greedy, q_update, trajectory_priority, transition_priority, QTable, PRIORITY_FLOOR,
};
pub use returns::{nstep_returns, vtrace, vtrace_targets, VtraceOutput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("importance ratio is not finite at step {0}")]
    NonFiniteRatio(usize),
    #[error("dual clip constant must exceed 1, got {0}")]
    InvalidDualClip(f64),
    #[error("observation does not identify a table state")]
    UnknownState,
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One agent step as recorded by an actor.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub behavior_log_prob: f64,
    pub value_estimate: f64,
    pub param_version: u64,
    pub agent_id: usize,
    pub player_id: PlayerId,
    /// Actor-local episode identifier; lets agents of one episode be aligned.
    pub episode_id: u64,
    pub episode_step: u32,
}

/// Ordered transitions of one agent within one episode segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Value of the state after the last transition; ignored when terminal.
    pub bootstrap_value: f64,
}

impl Trajectory {
    /// Build a trajectory, checking its invariants.
    pub fn new(transitions: Vec<Transition>, bootstrap_value: f64) -> Result<Self, LearnError> {
        let invalid = |m: String| Err(LearnError::InvalidTrajectory(m));
        if let Some(first) = transitions.first() {
            for (i, t) in transitions.iter().enumerate() {
                if t.done && i + 1 != transitions.len() {
                    return invalid(format!("done flag at step {i} is not the tail"));
                }
                if t.player_id != first.player_id {
                    return invalid(format!("step {i} belongs to player {}", t.player_id));
                }
                if !t.reward.is_finite() {
                    return invalid(format!("non-finite reward at step {i}"));
                }
                if !(t.behavior_log_prob <= 0.0) {
                    return invalid(format!("behavior log-prob {} > 0 at step {i}", t.behavior_log_prob));
                }
                if t.param_version == 0 {
                    return invalid(format!("parameter version 0 at step {i}"));
                }
            }
        }
        if !bootstrap_value.is_finite() {
            return invalid("non-finite bootstrap value".into());
        }
        Ok(Trajectory {
            transitions,
            bootstrap_value,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.done)
    }

    /// Oldest parameter version that generated any step.
    pub fn min_param_version(&self) -> u64 {
        self.transitions.iter().map(|t| t.param_version).min().unwrap_or(0)
    }

    pub fn player_id(&self) -> Option<&PlayerId> {
        self.transitions.first().map(|t| &t.player_id)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }
}

/// Which loss the learner optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    A2c,
    Ppo,
    Q,
}

impl std::str::FromStr for Algorithm {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a2c" => Ok(Algorithm::A2c),
            "ppo" => Ok(Algorithm::Ppo),
            "q" | "qlearning" => Ok(Algorithm::Q),
            other => Err(LearnError::InvalidHyperparameter(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::A2c => "a2c",
            Algorithm::Ppo => "ppo",
            Algorithm::Q => "q",
        })
    }
}

/// Learning hyperparameters shared by every algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub dual_clip_c: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub q_alpha: f64,
    pub epsilon: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            algorithm: Algorithm::A2c,
            gamma: 0.99,
            learning_rate: 0.1,
            clip_eps: 0.2,
            dual_clip_c: 3.0,
            rho_bar: 1.0,
            c_bar: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
            q_alpha: 0.1,
            epsilon: 0.1,
        }
    }
}
