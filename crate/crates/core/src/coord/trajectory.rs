use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::Mutex;

use super::{CoordError, DropReason, LagRecord, LagTracker, ParameterStore, TopologyConfig, TrajOutcome};
use crate::learn::{train_gradient, LearnConfig, Trajectory};
use crate::policy::apply_gradient;
use crate::PlayerId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrajectoryCounts {
    pub queued_trajectories: usize,
    pub queued_samples: usize,
    pub consumed_samples: u64,
    pub dropped_samples: u64,
    pub updates: u64,
}

/// Bounded trajectory queue feeding one learner loop.
pub struct TrajectoryCoordinator {
    player: PlayerId,
    batch_size: usize,
    capacity: usize,
    max_staleness: Option<u64>,
    learn: LearnConfig,
    store: Arc<ParameterStore>,
    lag: LagTracker,
    queue: Mutex<VecDeque<Trajectory>>,
    counts: Mutex<TrajectoryCounts>,
}

impl TrajectoryCoordinator {
    pub fn new(
        config: &TopologyConfig,
        player: PlayerId,
        learn: LearnConfig,
        store: Arc<ParameterStore>,
    ) -> Result<Self, CoordError> {
        config.validate()?;
        store.version(&player)?;
        Ok(TrajectoryCoordinator {
            player,
            batch_size: config.batch_size,
            capacity: config.queue_capacity,
            max_staleness: config.max_staleness,
            learn,
            store,
            lag: LagTracker::new(),
            queue: Mutex::new(VecDeque::new()),
            counts: Mutex::new(TrajectoryCounts::default()),
        })
    }

    pub fn store(&self) -> &Arc<ParameterStore> {
        &self.store
    }

    pub fn lag(&self) -> &LagTracker {
        &self.lag
    }

    pub fn counts(&self) -> TrajectoryCounts {
        let q = self.queue.lock();
        TrajectoryCounts {
            queued_trajectories: q.len(),
            queued_samples: q.iter().map(Trajectory::len).sum(),
            ..*self.counts.lock()
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn submit_trajectory(&self, traj: Trajectory) -> Result<TrajOutcome, CoordError> {
        let current = self.store.version(&self.player)?;
        let staleness = current.saturating_sub(traj.min_param_version());
        if self.max_staleness.is_some_and(|m| staleness > m) {
            self.counts.lock().dropped_samples += traj.len() as u64;
            return Ok(TrajOutcome::Dropped(DropReason::Stale));
        }
        let mut q = self.queue.lock();
        if q.len() >= self.capacity {
            return Err(CoordError::QueueFull {
                capacity: self.capacity,
            });
        }
        q.push_back(traj);
        Ok(TrajOutcome::Queued)
    }

    /// A full batch is waiting.
    pub fn ready(&self) -> bool {
        self.queue.lock().len() >= self.batch_size
    }

    /// Consume one batch if available: V-trace / PPO gradient, SGD step,
    /// publish. Returns the published version.
    pub fn learner_step(&self, now: u64) -> Result<Option<u64>, CoordError> {
        let batch: Vec<Trajectory> = {
            let mut q = self.queue.lock();
            if q.len() < self.batch_size {
                return Ok(None);
            }
            q.drain(..self.batch_size).collect()
        };
        let current = self.store.latest(&self.player)?;
        let samples: usize = batch.iter().map(Trajectory::len).sum();
        for t in &batch {
            self.lag.record(LagRecord::new(t.min_param_version(), current.version, now));
        }
        let update = train_gradient(&current, &batch, &self.learn)?;
        let next = apply_gradient(&current, &update, self.learn.learning_rate)?;
        let v = self.store.publish(next)?;
        let mut c = self.counts.lock();
        c.consumed_samples += samples as u64;
        c.updates += 1;
        Ok(Some(v))
    }
}
