use std::sync::Arc;

use parking_lot::Mutex;

use super::{
    check_len, dropped_units, CoordError, DropReason, LagRecord, LagTracker, ParameterStore, SubmitOutcome,
    TopologyConfig, TopologyKind,
};
use crate::policy::{apply_gradient, GradientUpdate};
use crate::PlayerId;

/// Mean of the per-sample gradients, summed in `producer_id` order
/// (ties keep input order) so the result is bitwise reproducible.
pub fn average_gradients(updates: &[GradientUpdate]) -> Result<GradientUpdate, CoordError> {
    let first = updates.first().ok_or(CoordError::EmptyUnits)?;
    let base = first.base_version;
    if updates.iter().any(|u| u.base_version != base) {
        return Err(CoordError::MixedVersions);
    }
    for u in updates {
        check_len(u, first.grad.len())?;
    }
    let mut order: Vec<&GradientUpdate> = updates.iter().collect();
    order.sort_by(|a, b| a.producer_id.cmp(&b.producer_id));
    let mut sum = vec![0.0; first.grad.len()];
    for u in order {
        let n = f64::from(u.sample_count.max(1));
        for (s, g) in sum.iter_mut().zip(&u.grad) {
            *s += g / n;
        }
    }
    let k = updates.len() as f64;
    Ok(GradientUpdate {
        grad: sum.into_iter().map(|s| s / k).collect(),
        base_version: base,
        sample_count: 1,
        producer_id: String::new(),
    })
}

/// Bundled-unit reduction: exclude the `floor(drop_fraction * n)` units that
/// arrived last, then average the rest.
pub fn allreduce_apply(units: &[(GradientUpdate, u64)], drop_fraction: f64) -> Result<GradientUpdate, CoordError> {
    if units.is_empty() {
        return Err(CoordError::EmptyUnits);
    }
    let base = units[0].0.base_version;
    if units.iter().any(|(u, _)| u.base_version != base) {
        return Err(CoordError::MixedVersions);
    }
    let mut by_arrival: Vec<&(GradientUpdate, u64)> = units.iter().collect();
    by_arrival.sort_by_key(|(_, order)| *order);
    let keep = units.len() - dropped_units(units.len(), drop_fraction);
    let kept: Vec<GradientUpdate> = by_arrival[..keep].iter().map(|(u, _)| u.clone()).collect();
    average_gradients(&kept)
}

struct State {
    pending: Vec<GradientUpdate>,
    last_applied: Option<GradientUpdate>,
    applied: u64,
    dropped: u64,
}

/// Learner side of the gradient-exchange topologies.
pub struct GradientCoordinator {
    config: TopologyConfig,
    player: PlayerId,
    learning_rate: f64,
    store: Arc<ParameterStore>,
    lag: LagTracker,
    state: Mutex<State>,
}

impl GradientCoordinator {
    pub fn new(
        config: TopologyConfig,
        player: PlayerId,
        learning_rate: f64,
        store: Arc<ParameterStore>,
    ) -> Result<Self, CoordError> {
        config.validate()?;
        if !config.kind.exchanges_gradients() {
            return Err(CoordError::InvalidConfig(format!("{} does not exchange gradients", config.kind)));
        }
        store.version(&player)?;
        Ok(GradientCoordinator {
            config,
            player,
            learning_rate,
            store,
            lag: LagTracker::new(),
            state: Mutex::new(State {
                pending: Vec::new(),
                last_applied: None,
                applied: 0,
                dropped: 0,
            }),
        })
    }

    pub fn store(&self) -> &Arc<ParameterStore> {
        &self.store
    }

    pub fn lag(&self) -> &LagTracker {
        &self.lag
    }

    /// The update most recently applied (already averaged for sync kinds).
    pub fn last_applied(&self) -> Option<GradientUpdate> {
        self.state.lock().last_applied.clone()
    }

    pub fn applied_count(&self) -> u64 {
        self.state.lock().applied
    }

    pub fn dropped_count(&self) -> u64 {
        self.state.lock().dropped
    }

    /// Gradients waiting for their epoch to close.
    pub fn pending(&self) -> usize {
        self.state.lock().pending.len()
    }

    /// Offer one gradient; `now` timestamps lag records.
    pub fn submit_gradient(&self, update: GradientUpdate, now: u64) -> Result<SubmitOutcome, CoordError> {
        let mut st = self.state.lock();
        let current = self.store.latest(&self.player)?;
        check_len(&update, current.values().len())?;
        let staleness = current.version.saturating_sub(update.base_version);

        if self.config.kind == TopologyKind::AsyncGradient {
            if self.config.max_staleness.is_some_and(|m| staleness > m) {
                st.dropped += 1;
                return Ok(SubmitOutcome::Dropped(DropReason::Stale));
            }
            let averaged = average_gradients(std::slice::from_ref(&update))?;
            self.lag.record(LagRecord::new(update.base_version, current.version, now));
            return self.apply(&mut st, &current, averaged).map(SubmitOutcome::Applied);
        }

        // Synchronous kinds: only gradients of the open epoch count.
        if update.base_version != current.version {
            st.dropped += 1;
            return Ok(SubmitOutcome::Dropped(DropReason::Late));
        }
        st.pending.push(update);
        if st.pending.len() < self.config.epoch_quorum() {
            return Ok(SubmitOutcome::Held);
        }
        let epoch = std::mem::take(&mut st.pending);
        for u in &epoch {
            self.lag.record(LagRecord::new(u.base_version, current.version, now));
        }
        let averaged = average_gradients(&epoch)?;
        self.apply(&mut st, &current, averaged).map(SubmitOutcome::Applied)
    }

    fn apply(
        &self,
        st: &mut State,
        current: &crate::policy::PolicyParameters,
        update: GradientUpdate,
    ) -> Result<u64, CoordError> {
        let next = apply_gradient(current, &update, self.learning_rate)?;
        let v = self.store.publish(next)?;
        st.last_applied = Some(update);
        st.applied += 1;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Arch, PolicyParameters};

    fn setup(kind: TopologyKind, actors: usize, quorum: f64) -> GradientCoordinator {
        let store = Arc::new(ParameterStore::new());
        store
            .publish(PolicyParameters::init("p".into(), Arch::Tabular { states: 1, actions: 3 }, 5))
            .unwrap();
        let cfg = TopologyConfig {
            kind,
            actor_count: actors,
            quorum_fraction: quorum,
            ..TopologyConfig::default()
        };
        GradientCoordinator::new(cfg, "p".into(), 0.5, store).unwrap()
    }

    fn g(values: [f64; 4], base: u64, producer: &str) -> GradientUpdate {
        GradientUpdate {
            grad: values.to_vec(),
            base_version: base,
            sample_count: 1,
            producer_id: producer.into(),
        }
    }

    #[test]
    fn async_applies_immediately() {
        let c = setup(TopologyKind::AsyncGradient, 2, 1.0);
        assert_eq!(c.submit_gradient(g([0.0; 4], 1, "a"), 0).unwrap(), SubmitOutcome::Applied(2));
        assert_eq!(c.submit_gradient(g([0.0; 4], 1, "b"), 0).unwrap(), SubmitOutcome::Applied(3));
        assert_eq!(c.lag().summary(None).max, Some(1));
    }

    #[test]
    fn async_staleness_bound() {
        let store = Arc::new(ParameterStore::new());
        store
            .publish(PolicyParameters::init("p".into(), Arch::Tabular { states: 1, actions: 3 }, 5))
            .unwrap();
        let cfg = TopologyConfig {
            kind: TopologyKind::AsyncGradient,
            max_staleness: Some(0),
            ..TopologyConfig::default()
        };
        let c = GradientCoordinator::new(cfg, "p".into(), 0.5, store).unwrap();
        c.submit_gradient(g([0.0; 4], 1, "a"), 0).unwrap();
        assert_eq!(
            c.submit_gradient(g([0.0; 4], 1, "b"), 0).unwrap(),
            SubmitOutcome::Dropped(DropReason::Stale)
        );
    }

    #[test]
    fn barrier_waits_for_everyone_and_averages() {
        let c = setup(TopologyKind::SyncBarrier, 4, 1.0);
        let gs = [
            g([1.0, 0.0, 0.0, 0.0], 1, "d"),
            g([0.0, 2.0, 0.0, 0.0], 1, "b"),
            g([0.0, 0.0, 3.0, 0.0], 1, "a"),
            g([0.0, 0.0, 0.0, 4.0], 1, "c"),
        ];
        for u in &gs[..3] {
            assert_eq!(c.submit_gradient(u.clone(), 0).unwrap(), SubmitOutcome::Held);
            assert_eq!(c.store().version(&"p".into()).unwrap(), 1);
        }
        assert_eq!(c.submit_gradient(gs[3].clone(), 0).unwrap(), SubmitOutcome::Applied(2));
        assert_eq!(c.last_applied().unwrap().grad, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(c.lag().summary(None).max, Some(0));
    }

    #[test]
    fn quorum_drops_latecomers() {
        let c = setup(TopologyKind::SyncQuorum, 4, 0.75);
        assert_eq!(c.submit_gradient(g([1.0; 4], 1, "a"), 0).unwrap(), SubmitOutcome::Held);
        assert_eq!(c.submit_gradient(g([1.0; 4], 1, "b"), 0).unwrap(), SubmitOutcome::Held);
        assert_eq!(c.submit_gradient(g([1.0; 4], 1, "c"), 0).unwrap(), SubmitOutcome::Applied(2));
        assert_eq!(
            c.submit_gradient(g([1.0; 4], 1, "d"), 0).unwrap(),
            SubmitOutcome::Dropped(DropReason::Late)
        );
    }

    #[test]
    fn shape_checked() {
        let c = setup(TopologyKind::AsyncGradient, 1, 1.0);
        let bad = GradientUpdate {
            grad: vec![0.0; 2],
            base_version: 1,
            sample_count: 1,
            producer_id: String::new(),
        };
        assert!(matches!(c.submit_gradient(bad, 0), Err(CoordError::ShapeMismatch { .. })));
    }

    #[test]
    fn allreduce_drops_slowest() {
        let units = vec![
            (g([4.0; 4], 1, "u0"), 0),
            (g([8.0; 4], 1, "u1"), 1),
            (g([100.0; 4], 1, "u2"), 3),
            (g([12.0; 4], 1, "u3"), 2),
        ];
        assert_eq!(allreduce_apply(&units, 0.25).unwrap().grad, vec![8.0; 4]);
        assert_eq!(allreduce_apply(&units, 0.0).unwrap().grad, vec![31.0; 4]);
        let mut mixed = units.clone();
        mixed[1].0.base_version = 2;
        assert_eq!(allreduce_apply(&mixed, 0.0), Err(CoordError::MixedVersions));
        assert_eq!(allreduce_apply(&[], 0.0), Err(CoordError::EmptyUnits));
    }
}
