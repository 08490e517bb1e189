//! Core building blocks for distributed deep reinforcement learning at desk scale.
//!
//! The crate is split along the roles of an actor/learner system:
//!
//! * [`env`]: deterministic toy environments and a vectorized wrapper.
//! * [`policy`]: versioned parameter snapshots, inference and hand-derived gradients.
//! * [`learn`]: returns, V-trace, A2C / dual-clip PPO gradients, tabular Q-learning.
//! * [`buffer`]: FIFO and prioritized replay, plus the unfinished/finished episode buffer.
//! * [`coord`]: the parameter store and the coordination topologies.
//! * [`league`]: players manager, Elo ratings and opponent sampling.

pub mod buffer;
pub mod coord;
pub mod env;
pub mod league;
pub mod learn;
pub mod policy;
pub mod seed;
pub mod wire;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a player (a team controlled by one parameter set).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub String);

impl PlayerId {
    pub fn new(id: impl Into<String>) -> Self {
        PlayerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PlayerId {
    fn from(s: &str) -> Self {
        PlayerId(s.to_owned())
    }
}
