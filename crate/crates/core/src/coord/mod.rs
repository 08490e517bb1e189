//! Parameter store and coordination topologies.
//!
//! Every topology funnels into the same [`ParameterStore`]: a learner-side
//! coordinator consumes gradients, trajectories or replayed transitions,
//! applies one SGD step and publishes the next version.

mod gradient;
mod inference;
mod lag;
mod replay;
mod store;
mod trajectory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::BufferError;
use crate::learn::LearnError;
use crate::policy::{GradientUpdate, PolicyError};
use crate::PlayerId;

pub use gradient::{allreduce_apply, average_gradients, GradientCoordinator};
pub use inference::{BatchStats, InferReply, InferRequest, InferenceBatcher};
pub use lag::{lag_stats, LagRecord, LagSummary, LagTracker};
pub use replay::ReplayCoordinator;
pub use store::{FetchMode, ParameterStore, Published};
pub use trajectory::{TrajectoryCoordinator, TrajectoryCounts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordError {
    #[error("player {player}: version {got} does not advance current version {current}")]
    VersionRegression { player: PlayerId, current: u64, got: u64 },
    #[error("player {player}: version {got} skips ahead of current version {current}")]
    VersionGap { player: PlayerId, current: u64, got: u64 },
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("timed out waiting for player {player} version {version}")]
    WaitTimeout { player: PlayerId, version: u64 },
    #[error("gradient length {got} does not match parameter length {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("trajectory queue is full ({capacity})")]
    QueueFull { capacity: usize },
    #[error("units carry different base versions")]
    MixedVersions,
    #[error("no units to reduce")]
    EmptyUnits,
    #[error("inference batcher shut down")]
    Timeout,
    #[error("invalid topology configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    AsyncGradient,
    AsyncTrajectory,
    CentralInference,
    SyncBarrier,
    SyncQuorum,
    BundledAllreduce,
    ReplayQlearning,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 7] = [
        TopologyKind::AsyncGradient,
        TopologyKind::AsyncTrajectory,
        TopologyKind::CentralInference,
        TopologyKind::SyncBarrier,
        TopologyKind::SyncQuorum,
        TopologyKind::BundledAllreduce,
        TopologyKind::ReplayQlearning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::AsyncGradient => "async_gradient",
            TopologyKind::AsyncTrajectory => "async_trajectory",
            TopologyKind::CentralInference => "central_inference",
            TopologyKind::SyncBarrier => "sync_barrier",
            TopologyKind::SyncQuorum => "sync_quorum",
            TopologyKind::BundledAllreduce => "bundled_allreduce",
            TopologyKind::ReplayQlearning => "replay_qlearning",
        }
    }

    /// Actors wait for each new version before producing more data.
    pub fn is_sync(self) -> bool {
        matches!(
            self,
            TopologyKind::SyncBarrier | TopologyKind::SyncQuorum | TopologyKind::BundledAllreduce
        )
    }

    /// Actors ship gradients rather than trajectories.
    pub fn exchanges_gradients(self) -> bool {
        matches!(self, TopologyKind::AsyncGradient) || self.is_sync()
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = CoordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoordError::InvalidConfig(format!("unknown topology `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub actor_count: usize,
    pub learner_count: usize,
    pub quorum_fraction: f64,
    pub drop_fraction: f64,
    /// `None` means unlimited.
    pub max_staleness: Option<u64>,
    pub inference_batch_max: usize,
    /// Milliseconds on the wall clock, ticks on the simulated clock.
    pub inference_timeout: u64,
    pub batch_size: usize,
    pub queue_capacity: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            kind: TopologyKind::AsyncTrajectory,
            actor_count: 4,
            learner_count: 1,
            quorum_fraction: 1.0,
            drop_fraction: 0.0,
            max_staleness: None,
            inference_batch_max: 8,
            inference_timeout: 5,
            batch_size: 4,
            queue_capacity: 64,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), CoordError> {
        let bad = |m: &str| Err(CoordError::InvalidConfig(m.into()));
        if self.actor_count == 0 {
            return bad("actor_count must be at least 1");
        }
        if self.learner_count != 1 {
            return bad("exactly one learner per player is supported");
        }
        if !(self.quorum_fraction > 0.0 && self.quorum_fraction <= 1.0) {
            return bad("quorum_fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return bad("drop_fraction must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.inference_batch_max == 0 || self.queue_capacity == 0 {
            return bad("batch sizes and queue capacity must be positive");
        }
        Ok(())
    }

    /// Gradients needed to close one synchronous epoch.
    pub fn epoch_quorum(&self) -> usize {
        let n = self.actor_count;
        match self.kind {
            TopologyKind::SyncQuorum => ((self.quorum_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n),
            TopologyKind::BundledAllreduce => n - dropped_units(n, self.drop_fraction),
            _ => n,
        }
    }
}

/// `floor(drop_fraction * n)`, never all of them.
pub(crate) fn dropped_units(n: usize, drop_fraction: f64) -> usize {
    ((drop_fraction * n as f64 + 1e-9).floor() as usize).min(n.saturating_sub(1))
}

/// Why a submission was not used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Stale,
    Late,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubmitOutcome {
    /// Applied; the store now holds this version.
    Applied(u64),
    /// Waiting for the rest of the epoch.
    Held,
    Dropped(DropReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajOutcome {
    Queued,
    Dropped(DropReason),
}

fn check_len(update: &GradientUpdate, expected: usize) -> Result<(), CoordError> {
    if update.grad.len() != expected {
        return Err(CoordError::ShapeMismatch {
            expected,
            got: update.grad.len(),
        });
    }
    Ok(())
}
