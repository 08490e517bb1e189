use std::collections::{HashMap, VecDeque};
use std::hash::Hash;

use parking_lot::Mutex;

use super::BufferError;
use crate::learn::{Trajectory, Transition};

struct Inner<K> {
    unfinished: HashMap<K, Vec<Transition>>,
    finished: VecDeque<Trajectory>,
}

/// Per-episode staging area: steps accumulate under a key and only become
/// visible as a [`Trajectory`] once the key is finished.
pub struct EpisodeBuffer<K> {
    inner: Mutex<Inner<K>>,
}

impl<K: Eq + Hash + Clone> Default for EpisodeBuffer<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Eq + Hash + Clone> EpisodeBuffer<K> {
    pub fn new() -> Self {
        EpisodeBuffer {
            inner: Mutex::new(Inner {
                unfinished: HashMap::new(),
                finished: VecDeque::new(),
            }),
        }
    }

    /// Register a key with no steps yet.
    pub fn begin(&self, key: K) {
        self.inner.lock().unfinished.entry(key).or_default();
    }

    pub fn append_step(&self, key: K, transition: Transition) {
        self.inner.lock().unfinished.entry(key).or_default().push(transition);
    }

    /// Move the key's steps into the finished queue as one trajectory.
    pub fn finish(&self, key: &K, bootstrap_value: f64) -> Result<Trajectory, BufferError> {
        let mut inner = self.inner.lock();
        let steps = inner.unfinished.get(key).ok_or(BufferError::UnknownEpisode)?;
        if steps.is_empty() {
            return Err(BufferError::FinishEmptyEpisode);
        }
        let traj = Trajectory::new(steps.clone(), bootstrap_value)?;
        inner.unfinished.remove(key);
        inner.finished.push_back(traj.clone());
        Ok(traj)
    }

    pub fn is_unfinished(&self, key: &K) -> bool {
        self.inner.lock().unfinished.contains_key(key)
    }

    pub fn unfinished_steps(&self) -> usize {
        self.inner.lock().unfinished.values().map(Vec::len).sum()
    }

    pub fn finished_len(&self) -> usize {
        self.inner.lock().finished.len()
    }

    /// Take every finished trajectory, oldest first.
    pub fn drain_finished(&self) -> Vec<Trajectory> {
        self.inner.lock().finished.drain(..).collect()
    }
}
