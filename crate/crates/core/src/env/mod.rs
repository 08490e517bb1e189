//! Deterministic, seedable toy environments with a uniform
//! multi-player / multi-agent stepping interface.
//!
//! Every environment is a pure function of its seed and the joint actions
//! played: replaying an action log from the same seed reproduces the exact
//! observation and reward stream.

mod chain;
mod grid;
mod matrix;
mod vec_env;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{ChainMdp, CHAIN_LEFT, CHAIN_RIGHT};
pub use grid::{GridCapture, GRID_ACTIONS};
pub use matrix::{MatrixGame, PAPER, ROCK, SCISSORS};
pub use vec_env::{VecEnv, VecStepResult};

pub type ActionId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("illegal action {action} for player {player} agent {agent}")]
    IllegalAction {
        player: usize,
        agent: usize,
        action: ActionId,
    },
    #[error("step called on a finished episode; reset first")]
    SteppedAfterDone,
    #[error("expected actions for {players} players x {agents} agents")]
    ActionShape { players: usize, agents: usize },
    #[error("batch of {got} action sets for {expected} environments")]
    BatchSizeMismatch { expected: usize, got: usize },
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
}

/// Identifier of one of the built-in environments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    MatrixRps,
    MatchingPennies,
    ChainMdp,
    GridCapture,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::MatrixRps => "matrix_rps",
            EnvId::MatchingPennies => "matching_pennies",
            EnvId::ChainMdp => "chain_mdp",
            EnvId::GridCapture => "grid_capture",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matrix_rps" => Ok(EnvId::MatrixRps),
            "matching_pennies" => Ok(EnvId::MatchingPennies),
            "chain_mdp" => Ok(EnvId::ChainMdp),
            "grid_capture" => Ok(EnvId::GridCapture),
            other => Err(EnvError::UnknownEnv(other.to_owned())),
        }
    }
}

/// Static description of an environment's interface.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub players: usize,
    pub agents_per_player: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: u32,
}

impl EnvSpec {
    /// The default spec of each built-in environment.
    pub fn of(env_id: EnvId) -> EnvSpec {
        match env_id {
            EnvId::MatrixRps => MatrixGame::rps().spec().clone(),
            EnvId::MatchingPennies => MatrixGame::matching_pennies().spec().clone(),
            EnvId::ChainMdp => ChainMdp::default().spec().clone(),
            EnvId::GridCapture => GridCapture::default().spec().clone(),
        }
    }
}

/// What one player sees: one feature vector and one legality mask per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct JointObservation {
    pub per_agent_obs: Vec<Vec<f64>>,
    pub action_mask: Vec<Vec<bool>>,
    pub episode_step: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Next observation, one entry per player.
    pub observations: Vec<JointObservation>,
    /// `rewards[player][agent]`.
    pub rewards: Vec<Vec<f64>>,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

/// Uniform stepping interface shared by all environments.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Reset to the initial state; returns one observation per player.
    fn reset(&mut self, seed: u64) -> Vec<JointObservation>;

    /// Advance with `joint_actions[player][agent]`.
    fn step(&mut self, joint_actions: &[Vec<ActionId>]) -> Result<StepResult, EnvError>;

    /// Current observation for every player.
    fn observe(&self) -> Vec<JointObservation>;

    fn is_done(&self) -> bool;
}

/// Build a boxed environment with its default parameters.
pub fn make_env(env_id: EnvId) -> Box<dyn Environment> {
    match env_id {
        EnvId::MatrixRps => Box::new(MatrixGame::rps()),
        EnvId::MatchingPennies => Box::new(MatrixGame::matching_pennies()),
        EnvId::ChainMdp => Box::new(ChainMdp::default()),
        EnvId::GridCapture => Box::new(GridCapture::default()),
    }
}

/// Shape and legality checks shared by every environment.
pub(crate) fn check_actions(
    spec: &EnvSpec,
    observations: &[JointObservation],
    joint_actions: &[Vec<ActionId>],
) -> Result<(), EnvError> {
    let shape_err = EnvError::ActionShape {
        players: spec.players,
        agents: spec.agents_per_player,
    };
    if joint_actions.len() != spec.players {
        return Err(shape_err);
    }
    for (player, (actions, obs)) in joint_actions.iter().zip(observations).enumerate() {
        if actions.len() != spec.agents_per_player {
            return Err(shape_err);
        }
        for (agent, &action) in actions.iter().enumerate() {
            let legal = obs.action_mask[agent].get(action).copied().unwrap_or(false);
            if !legal {
                return Err(EnvError::IllegalAction {
                    player,
                    agent,
                    action,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_ids_round_trip_through_names() {
        for id in [
            EnvId::MatrixRps,
            EnvId::MatchingPennies,
            EnvId::ChainMdp,
            EnvId::GridCapture,
        ] {
            assert_eq!(id.name().parse::<EnvId>().unwrap(), id);
            assert_eq!(&EnvSpec::of(id), make_env(id).spec());
        }
        assert!("atari".parse::<EnvId>().is_err());
    }

    #[test]
    fn declared_player_counts() {
        assert_eq!(EnvSpec::of(EnvId::ChainMdp).players, 1);
        assert_eq!(EnvSpec::of(EnvId::MatrixRps).players, 2);
        let grid = EnvSpec::of(EnvId::GridCapture);
        assert_eq!((grid.players, grid.agents_per_player), (2, 2));
    }
}
