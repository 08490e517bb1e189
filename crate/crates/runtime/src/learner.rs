//! Learner side of one player: the coordinator for the configured topology
//! plus sample accounting.
//!
//! Samples are learning-seat transitions. Every sample an actor reports
//! ends up in exactly one of `consumed`, `queued` or `dropped`.

use std::sync::Arc;

use ddrl_core::coord::{
    CoordError, GradientCoordinator, LagRecord, ParameterStore, ReplayCoordinator, SubmitOutcome, TopologyKind,
    TrajOutcome, TrajectoryCoordinator,
};
use ddrl_core::learn::Trajectory;
use ddrl_core::policy::{GradientUpdate, PolicyParameters};
use ddrl_core::seed::{self, DetRng};
use ddrl_core::PlayerId;

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleCounts {
    pub consumed: u64,
    pub queued: u64,
    pub dropped: u64,
}

enum Side {
    Gradient {
        coord: GradientCoordinator,
        /// Samples behind gradients held for the open epoch.
        held: u64,
        consumed: u64,
        dropped: u64,
    },
    Trajectory(TrajectoryCoordinator),
    Replay {
        coord: ReplayCoordinator,
        sample: usize,
        rng: DetRng,
    },
}

/// Result of offering trajectories to the learner.
#[derive(Debug, PartialEq)]
pub struct Offered {
    /// Trajectories the queue could not take yet, oldest first.
    pub rejected: Vec<Trajectory>,
}

pub struct Learner {
    player: PlayerId,
    store: Arc<ParameterStore>,
    side: Side,
}

impl Learner {
    /// Publish `initial` and build the coordinator for the configured topology.
    pub fn new(cfg: &ExperimentConfig, initial: PolicyParameters) -> Result<Self, CoordError> {
        let player = initial.player_id.clone();
        let store = Arc::new(ParameterStore::new());
        store.publish(initial)?;
        let side = match cfg.topology.kind {
            TopologyKind::ReplayQlearning => Side::Replay {
                coord: ReplayCoordinator::new(
                    player.clone(),
                    cfg.replay_capacity,
                    cfg.learn.q_alpha,
                    cfg.learn.gamma,
                    store.clone(),
                )?,
                sample: cfg.replay_sample,
                rng: seed::rng(seed::derive(cfg.seed, 0x4E91)),
            },
            k if k.exchanges_gradients() => Side::Gradient {
                coord: GradientCoordinator::new(
                    cfg.topology.clone(),
                    player.clone(),
                    cfg.learn.learning_rate,
                    store.clone(),
                )?,
                held: 0,
                consumed: 0,
                dropped: 0,
            },
            _ => Side::Trajectory(TrajectoryCoordinator::new(
                &cfg.topology,
                player.clone(),
                cfg.learn.clone(),
                store.clone(),
            )?),
        };
        Ok(Learner { player, store, side })
    }

    pub fn store(&self) -> &Arc<ParameterStore> {
        &self.store
    }

    pub fn player(&self) -> &PlayerId {
        &self.player
    }

    pub fn current(&self) -> Arc<PolicyParameters> {
        self.store.latest(&self.player).expect("player registered at construction")
    }

    pub fn version(&self) -> u64 {
        self.current().version
    }

    /// Submit one actor gradient carrying `samples` transitions.
    pub fn submit_gradient(&mut self, update: GradientUpdate, samples: u64, now: u64) -> Result<SubmitOutcome, CoordError> {
        let Side::Gradient {
            coord,
            held,
            consumed,
            dropped,
        } = &mut self.side
        else {
            return Err(CoordError::InvalidConfig("topology does not take gradients".into()));
        };
        let outcome = coord.submit_gradient(update, now)?;
        match outcome {
            SubmitOutcome::Applied(_) => {
                *consumed += *held + samples;
                *held = 0;
            }
            SubmitOutcome::Held => *held += samples,
            SubmitOutcome::Dropped(_) => *dropped += samples,
        }
        Ok(outcome)
    }

    /// Offer trajectories in order; stops at the first one the queue cannot hold.
    pub fn offer(&mut self, trajectories: Vec<Trajectory>) -> Result<Offered, CoordError> {
        match &mut self.side {
            Side::Gradient { .. } => Err(CoordError::InvalidConfig("topology does not take trajectories".into())),
            Side::Trajectory(coord) => {
                let mut rest = trajectories.into_iter();
                while let Some(t) = rest.next() {
                    match coord.submit_trajectory(t.clone()) {
                        Ok(TrajOutcome::Queued | TrajOutcome::Dropped(_)) => {}
                        Err(CoordError::QueueFull { .. }) => {
                            let mut rejected = vec![t];
                            rejected.extend(rest);
                            return Ok(Offered { rejected });
                        }
                        Err(e) => return Err(e),
                    }
                }
                Ok(Offered { rejected: Vec::new() })
            }
            Side::Replay { coord, .. } => {
                let transitions = trajectories.into_iter().flat_map(|t| t.transitions).collect();
                coord.submit_transitions(transitions)?;
                Ok(Offered { rejected: Vec::new() })
            }
        }
    }

    /// A learner update is possible right now.
    pub fn ready(&self) -> bool {
        match &self.side {
            Side::Gradient { .. } => false,
            Side::Trajectory(coord) => coord.ready(),
            Side::Replay { coord, sample, .. } => {
                let (received, _, updates) = coord.counts();
                received >= (updates + 1) * *sample as u64
            }
        }
    }

    /// Run one update if [`Learner::ready`]; returns the published version.
    pub fn step(&mut self, now: u64) -> Result<Option<u64>, CoordError> {
        if !self.ready() {
            return Ok(None);
        }
        match &mut self.side {
            Side::Gradient { .. } => Ok(None),
            Side::Trajectory(coord) => coord.learner_step(now),
            Side::Replay { coord, sample, rng } => coord.learner_step(*sample, now, rng),
        }
    }

    pub fn updates(&self) -> u64 {
        match &self.side {
            Side::Gradient { coord, .. } => coord.applied_count(),
            Side::Trajectory(coord) => coord.counts().updates,
            Side::Replay { coord, .. } => coord.counts().2,
        }
    }

    pub fn samples(&self) -> SampleCounts {
        match &self.side {
            Side::Gradient {
                held, consumed, dropped, ..
            } => SampleCounts {
                consumed: *consumed,
                queued: *held,
                dropped: *dropped,
            },
            Side::Trajectory(coord) => {
                let c = coord.counts();
                SampleCounts {
                    consumed: c.consumed_samples,
                    queued: c.queued_samples as u64,
                    dropped: c.dropped_samples,
                }
            }
            Side::Replay { coord, .. } => {
                // Replayed transitions stay in the buffer; only eviction removes them.
                let (received, _, _) = coord.counts();
                let held = coord.len() as u64;
                SampleCounts {
                    consumed: 0,
                    queued: held,
                    dropped: received - held,
                }
            }
        }
    }

    /// Trajectories waiting in the learner queue.
    pub fn queue_depth(&self) -> usize {
        match &self.side {
            Side::Gradient { coord, .. } => coord.pending(),
            Side::Trajectory(coord) => coord.queue_len(),
            Side::Replay { coord, .. } => coord.len(),
        }
    }

    pub fn lag_records(&self) -> Vec<LagRecord> {
        match &self.side {
            Side::Gradient { coord, .. } => coord.lag().records(),
            Side::Trajectory(coord) => coord.lag().records(),
            Side::Replay { coord, .. } => coord.lag().records(),
        }
    }

    pub fn lag_count(&self) -> usize {
        match &self.side {
            Side::Gradient { coord, .. } => coord.lag().len(),
            Side::Trajectory(coord) => coord.lag().len(),
            Side::Replay { coord, .. } => coord.lag().len(),
        }
    }
}
