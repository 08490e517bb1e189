use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;

use super::{CoordError, LagRecord, LagTracker, ParameterStore};
use crate::buffer::PrioritizedBuffer;
use crate::learn::{q_update, transition_priority, QTable, Transition};
use crate::PlayerId;

struct State {
    buffer: PrioritizedBuffer<Transition>,
    table: QTable,
    received: u64,
    replayed: u64,
    updates: u64,
}

/// Shared prioritized replay plus a tabular Q-learner that publishes its
/// table as tabular policy parameters.
pub struct ReplayCoordinator {
    player: PlayerId,
    alpha: f64,
    gamma: f64,
    store: Arc<ParameterStore>,
    lag: LagTracker,
    state: Mutex<State>,
}

impl ReplayCoordinator {
    pub fn new(
        player: PlayerId,
        capacity: usize,
        alpha: f64,
        gamma: f64,
        store: Arc<ParameterStore>,
    ) -> Result<Self, CoordError> {
        let params = store.latest(&player)?;
        let table = QTable::from_params(&params)?;
        Ok(ReplayCoordinator {
            player,
            alpha,
            gamma,
            store,
            lag: LagTracker::new(),
            state: Mutex::new(State {
                buffer: PrioritizedBuffer::new(capacity),
                table,
                received: 0,
                replayed: 0,
                updates: 0,
            }),
        })
    }

    pub fn lag(&self) -> &LagTracker {
        &self.lag
    }

    pub fn table(&self) -> QTable {
        self.state.lock().table.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (transitions received, transitions replayed, learner updates)
    pub fn counts(&self) -> (u64, u64, u64) {
        let s = self.state.lock();
        (s.received, s.replayed, s.updates)
    }

    /// Store transitions with their current TD-error priority.
    pub fn submit_transitions(&self, transitions: Vec<Transition>) -> Result<(), CoordError> {
        let mut s = self.state.lock();
        for t in transitions {
            let p = transition_priority(&t, &s.table, self.gamma)?;
            s.buffer.push(t, p)?;
            s.received += 1;
        }
        Ok(())
    }

    /// Sample `k` transitions, apply Q-learning to them, refresh their
    /// priorities and publish the new table.
    pub fn learner_step<R: Rng + ?Sized>(&self, k: usize, now: u64, rng: &mut R) -> Result<Option<u64>, CoordError> {
        let mut s = self.state.lock();
        if s.buffer.is_empty() {
            return Ok(None);
        }
        let current = self.store.latest(&self.player)?;
        let drawn = s.buffer.sample(k, rng)?;
        let transitions: Vec<Transition> = drawn.iter().map(|(_, t)| t.clone()).collect();
        for t in &transitions {
            self.lag.record(LagRecord::new(t.param_version, current.version, now));
        }
        s.table = q_update(&s.table, &transitions, self.alpha, self.gamma)?;
        let mut ids = Vec::with_capacity(drawn.len());
        let mut prios = Vec::with_capacity(drawn.len());
        for (id, t) in &drawn {
            ids.push(*id);
            prios.push(transition_priority(t, &s.table, self.gamma)?);
        }
        s.buffer.update_priorities(&ids, &prios)?;
        s.replayed += transitions.len() as u64;
        s.updates += 1;
        let v = self
            .store
            .publish(s.table.to_params(self.player.clone(), current.version + 1))?;
        Ok(Some(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Arch, PolicyParameters};

    #[test]
    fn learns_terminal_reward() {
        let store = Arc::new(ParameterStore::new());
        let arch = Arch::Tabular { states: 2, actions: 2 };
        let zeros = PolicyParameters::new("p".into(), 1, arch, vec![0.0; 6]).unwrap();
        store.publish(zeros).unwrap();
        let c = ReplayCoordinator::new("p".into(), 16, 0.5, 0.9, store.clone()).unwrap();
        let t = Transition {
            obs: vec![1.0, 0.0],
            mask: vec![true, true],
            action: 1,
            reward: 1.0,
            next_obs: vec![0.0, 1.0],
            done: true,
            behavior_log_prob: -0.1,
            value_estimate: 0.0,
            param_version: 1,
            agent_id: 0,
            player_id: "p".into(),
            episode_id: 0,
            episode_step: 0,
        };
        c.submit_transitions(vec![t]).unwrap();
        let mut rng = crate::seed::rng(0);
        assert_eq!(c.learner_step(1, 0, &mut rng).unwrap(), Some(2));
        assert_eq!(c.table().get(0, 1), 0.5);
        assert_eq!(store.latest(&"p".into()).unwrap().values()[1], 0.5);
    }
}
