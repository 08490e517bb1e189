use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// Version gap between the learner and the policy that produced a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagRecord {
    pub actor_version: u64,
    pub learner_version: u64,
    pub delta: u64,
    pub timestamp: u64,
}

impl LagRecord {
    pub fn new(actor_version: u64, learner_version: u64, timestamp: u64) -> Self {
        LagRecord {
            actor_version,
            learner_version,
            delta: learner_version.saturating_sub(actor_version),
            timestamp,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LagSummary {
    pub count: usize,
    pub min: Option<u64>,
    pub max: Option<u64>,
    pub mean: f64,
    /// delta -> occurrences
    pub histogram: BTreeMap<u64, usize>,
}

#[derive(Default)]
pub struct LagTracker {
    records: Mutex<Vec<LagRecord>>,
}

impl LagTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, r: LagRecord) {
        self.records.lock().push(r);
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<LagRecord> {
        self.records.lock().clone()
    }

    /// Summary over the most recent `window` records (`None` = all).
    pub fn summary(&self, window: Option<usize>) -> LagSummary {
        let records = self.records.lock();
        let n = window.map_or(records.len(), |w| w.min(records.len()));
        lag_stats(&records[records.len() - n..])
    }
}

pub fn lag_stats(records: &[LagRecord]) -> LagSummary {
    let mut s = LagSummary {
        count: records.len(),
        ..LagSummary::default()
    };
    if records.is_empty() {
        return s;
    }
    let mut total = 0.0;
    for r in records {
        *s.histogram.entry(r.delta).or_default() += 1;
        total += r.delta as f64;
    }
    s.min = records.iter().map(|r| r.delta).min();
    s.max = records.iter().map(|r| r.delta).max();
    s.mean = total / records.len() as f64;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries() {
        let t = LagTracker::new();
        assert_eq!(t.summary(Some(0)), LagSummary::default());
        for (a, l) in [(1, 1), (1, 3), (2, 3)] {
            t.record(LagRecord::new(a, l, 0));
        }
        let s = t.summary(None);
        assert_eq!((s.min, s.max, s.count), (Some(0), Some(2), 3));
        assert!((s.mean - 1.0).abs() < 1e-12);
        assert_eq!(s.histogram.get(&1), Some(&1));
        assert_eq!(t.summary(Some(1)).max, Some(1));
        assert_eq!(t.summary(Some(0)).count, 0);
    }
}
