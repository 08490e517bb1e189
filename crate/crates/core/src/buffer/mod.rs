//! Experience storage: a bounded FIFO queue, proportional prioritized replay
//! over a sum tree, and the unfinished/finished episode buffer.

mod episode;
mod sum_tree;

use std::collections::{HashMap, VecDeque};

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::learn::LearnError;

pub use episode::EpisodeBuffer;
pub use sum_tree::SumTree;

pub const DEFAULT_FIFO_CAPACITY: usize = 4096;
pub const DEFAULT_PRIORITIZED_CAPACITY: usize = 16384;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BufferError {
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("requested {requested} entries from a buffer holding {size}")]
    SampleTooLarge { requested: usize, size: usize },
    #[error("unknown entry id {0}")]
    UnknownId(u64),
    #[error("priority must be positive and finite, got {0}")]
    NonPositivePriority(f64),
    #[error("unknown episode")]
    UnknownEpisode,
    #[error("episode has no steps")]
    FinishEmptyEpisode,
    #[error(transparent)]
    Trajectory(#[from] LearnError),
}

/// Bounded queue; pushing past capacity evicts the oldest entry.
#[derive(Clone, Debug)]
pub struct FifoBuffer<T> {
    capacity: usize,
    next_id: u64,
    entries: VecDeque<(u64, T)>,
}

impl<T: Clone> FifoBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        FifoBuffer {
            capacity: capacity.max(1),
            next_id: 0,
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Store `payload`; returns its id and any entry evicted to make room.
    pub fn push(&mut self, payload: T) -> (u64, Option<(u64, T)>) {
        let id = self.next_id;
        self.next_id += 1;
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back((id, payload));
        (id, evicted)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.iter().any(|(i, _)| *i == id)
    }

    /// `k` distinct entries chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<(u64, T)>, BufferError> {
        if self.entries.is_empty() {
            return Err(BufferError::EmptyBuffer);
        }
        if k > self.entries.len() {
            return Err(BufferError::SampleTooLarge {
                requested: k,
                size: self.entries.len(),
            });
        }
        Ok(index::sample(rng, self.entries.len(), k)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }

    /// Remove and return up to `k` of the oldest entries.
    pub fn pop_batch(&mut self, k: usize) -> Vec<(u64, T)> {
        let n = k.min(self.entries.len());
        self.entries.drain(..n).collect()
    }
}

#[derive(Clone, Debug)]
struct Slot<T> {
    id: u64,
    payload: T,
    insert_time: u64,
}

/// Proportional prioritized replay. Sampling draws with replacement with
/// probability `priority / total`; eviction removes the oldest entry.
#[derive(Clone, Debug)]
pub struct PrioritizedBuffer<T> {
    capacity: usize,
    tree: SumTree,
    slots: Vec<Option<Slot<T>>>,
    index: HashMap<u64, usize>,
    /// Next slot to fill; slots are filled in insertion order so the cursor
    /// always points at the oldest entry once the ring is full.
    cursor: usize,
    clock: u64,
}

impl<T: Clone> PrioritizedBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        PrioritizedBuffer {
            capacity,
            tree: SumTree::new(capacity),
            slots: vec![None; capacity],
            index: HashMap::new(),
            cursor: 0,
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.tree.total()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn priority(&self, id: u64) -> Result<f64, BufferError> {
        let slot = *self.index.get(&id).ok_or(BufferError::UnknownId(id))?;
        Ok(self.tree.get(slot))
    }

    /// Store `payload`; returns its id and the evicted entry's id, if any.
    pub fn push(&mut self, payload: T, priority: f64) -> Result<(u64, Option<u64>), BufferError> {
        check_priority(priority)?;
        let id = self.clock;
        self.clock += 1;
        let slot = self.cursor;
        self.cursor = (self.cursor + 1) % self.capacity;
        let evicted = self.slots[slot].take().map(|old| {
            self.index.remove(&old.id);
            old.id
        });
        self.slots[slot] = Some(Slot {
            id,
            payload,
            insert_time: id,
        });
        self.index.insert(id, slot);
        self.tree.set(slot, priority);
        Ok((id, evicted))
    }

    /// `k` independent draws, each entry with probability proportional to
    /// its priority.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<(u64, T)>, BufferError> {
        if self.is_empty() {
            return Err(BufferError::EmptyBuffer);
        }
        let total = self.tree.total();
        Ok((0..k)
            .map(|_| {
                let slot = self.tree.find(rng.gen::<f64>() * total);
                let s = self.slots[slot].as_ref().expect("weighted leaf is occupied");
                (s.id, s.payload.clone())
            })
            .collect())
    }

    pub fn update_priorities(&mut self, ids: &[u64], priorities: &[f64]) -> Result<(), BufferError> {
        if ids.len() != priorities.len() {
            return Err(BufferError::Trajectory(LearnError::ShapeMismatch {
                expected: ids.len(),
                got: priorities.len(),
            }));
        }
        // Validate everything first so a bad entry leaves the tree untouched.
        let mut slots = Vec::with_capacity(ids.len());
        for (&id, &p) in ids.iter().zip(priorities) {
            check_priority(p)?;
            slots.push(*self.index.get(&id).ok_or(BufferError::UnknownId(id))?);
        }
        for (slot, &p) in slots.into_iter().zip(priorities) {
            self.tree.set(slot, p);
        }
        Ok(())
    }

    /// Insert time of the oldest live entry.
    pub fn oldest(&self) -> Option<u64> {
        self.slots.iter().flatten().map(|s| s.insert_time).min()
    }

    /// Sum-tree consistency and agreement between live slots and weights.
    pub fn audit(&self) -> bool {
        self.tree.audit()
            && (0..self.capacity).all(|i| self.slots[i].is_some() == (self.tree.get(i) > 0.0))
            && self.index.iter().all(|(id, &slot)| self.slots[slot].as_ref().is_some_and(|s| s.id == *id))
    }
}

fn check_priority(p: f64) -> Result<(), BufferError> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(BufferError::NonPositivePriority(p))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::seed;

    #[test]
    fn fifo_eviction_and_sampling() {
        let mut b = FifoBuffer::new(2);
        let (first, _) = b.push('a');
        b.push('b');
        let (_, evicted) = b.push('c');
        assert_eq!(evicted, Some((first, 'a')));
        assert!(!b.contains(first));
        assert_eq!(b.len(), 2);

        let mut rng = seed::rng(3);
        let mut all: Vec<char> = b.sample(2, &mut rng).unwrap().into_iter().map(|x| x.1).collect();
        all.sort();
        assert_eq!(all, vec!['b', 'c']);
        assert!(matches!(b.sample(3, &mut rng), Err(BufferError::SampleTooLarge { .. })));
        assert!(matches!(FifoBuffer::<u8>::new(4).sample(1, &mut rng), Err(BufferError::EmptyBuffer)));
    }

    #[test]
    fn prioritized_basics() {
        let mut b = PrioritizedBuffer::new(2);
        let mut rng = seed::rng(0);
        assert_eq!(b.sample(1, &mut rng), Err(BufferError::EmptyBuffer));
        let (a, _) = b.push("a", 1.0).unwrap();
        assert_eq!(b.sample(1, &mut rng).unwrap(), vec![(a, "a")]);
        b.push("b", 2.0).unwrap();
        let (_, evicted) = b.push("c", 4.0).unwrap();
        assert_eq!(evicted, Some(a));
        assert_eq!(b.total(), 6.0);
        assert_eq!(b.update_priorities(&[a], &[1.0]), Err(BufferError::UnknownId(a)));
        assert!(matches!(b.push("d", 0.0), Err(BufferError::NonPositivePriority(_))));
        assert!(b.audit());
    }

    #[test]
    fn prioritized_frequencies() {
        let mut b = PrioritizedBuffer::new(4);
        b.push(0, 1.0).unwrap();
        let (second, _) = b.push(1, 3.0).unwrap();
        let mut rng = seed::rng(11);
        let draws = b.sample(100_000, &mut rng).unwrap();
        let freq = draws.iter().filter(|d| d.0 == second).count() as f64 / 1e5;
        assert!((freq - 0.75).abs() < 0.01, "{freq}");

        b.update_priorities(&[0, second], &[2.0, 2.0]).unwrap();
        assert_eq!(b.total(), 4.0);
        let draws = b.sample(100_000, &mut rng).unwrap();
        let freq = draws.iter().filter(|d| d.0 == second).count() as f64 / 1e5;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Push(f64),
        Update(usize, f64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0.01f64..10.0).prop_map(Op::Push),
            (0usize..64, 0.01f64..10.0).prop_map(|(i, p)| Op::Update(i, p)),
        ]
    }

    proptest! {
        #[test]
        fn root_matches_live_priorities(ops in proptest::collection::vec(op(), 1..200), cap in 1usize..20) {
            let mut b = PrioritizedBuffer::new(cap);
            let mut live: Vec<(u64, f64)> = Vec::new();
            for o in ops {
                match o {
                    Op::Push(p) => {
                        let (id, ev) = b.push((), p).unwrap();
                        if let Some(e) = ev {
                            live.retain(|(i, _)| *i != e);
                        }
                        live.push((id, p));
                    }
                    Op::Update(i, p) if !live.is_empty() => {
                        let k = i % live.len();
                        b.update_priorities(&[live[k].0], &[p]).unwrap();
                        live[k].1 = p;
                    }
                    Op::Update(..) => {}
                }
                prop_assert!(b.audit());
                prop_assert!(live.len() <= cap);
                let fresh: f64 = live.iter().map(|x| x.1).sum();
                prop_assert!((b.total() - fresh).abs() <= 1e-9 * fresh.max(1.0));
                let oldest = live.iter().map(|x| x.0).min();
                prop_assert_eq!(b.oldest(), oldest);
            }
        }
    }
}
