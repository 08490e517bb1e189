//! Per-worker, per-operation delay injection with seeded draws.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ddrl_core::seed::{self, DetRng};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelayError {
    #[error("unknown worker `{0}`")]
    UnknownWorker(WorkerId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkerId {
    Actor(usize),
    /// Every actor without an entry of its own.
    Actors,
    Learner,
}

impl WorkerId {
    fn stream(self) -> u64 {
        match self {
            WorkerId::Actor(i) => i as u64,
            WorkerId::Actors => u64::MAX - 1,
            WorkerId::Learner => u64::MAX,
        }
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkerId::Actor(i) => write!(f, "actor{i}"),
            WorkerId::Actors => f.write_str("actors"),
            WorkerId::Learner => f.write_str("learner"),
        }
    }
}

impl FromStr for WorkerId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "actors" => Ok(WorkerId::Actors),
            "learner" => Ok(WorkerId::Learner),
            _ => {
                let n = s.strip_prefix("actor").ok_or(())?;
                if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(());
                }
                n.parse().map(WorkerId::Actor).map_err(|_| ())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DelayOp {
    /// One vectorized environment step.
    EnvStep,
    /// One inference pass (actor-local, or one server-side batch).
    Infer,
    /// Shipping one message to the learner.
    Send,
    /// Fetching parameters from the store.
    Fetch,
    /// One learner update.
    Learn,
    /// Computing a gradient on the actor.
    Grad,
}

impl DelayOp {
    pub const ALL: [DelayOp; 6] = [
        DelayOp::EnvStep,
        DelayOp::Infer,
        DelayOp::Send,
        DelayOp::Fetch,
        DelayOp::Learn,
        DelayOp::Grad,
    ];

    fn name(self) -> &'static str {
        match self {
            DelayOp::EnvStep => "env_step",
            DelayOp::Infer => "infer",
            DelayOp::Send => "send",
            DelayOp::Fetch => "fetch",
            DelayOp::Learn => "learn",
            DelayOp::Grad => "grad",
        }
    }
}

impl fmt::Display for DelayOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DelayOp {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        DelayOp::ALL.into_iter().find(|op| op.name() == s).ok_or(())
    }
}

/// Delay distribution in clock units (ticks, or milliseconds on the wall clock).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelaySpec {
    Const(u64),
    /// Uniform over the inclusive integer range.
    Uniform(u64, u64),
    /// The operation never completes.
    Halt,
}

impl fmt::Display for DelaySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelaySpec::Const(n) => write!(f, "const:{n}"),
            DelaySpec::Uniform(a, b) => write!(f, "uniform:{a}:{b}"),
            DelaySpec::Halt => f.write_str("halt"),
        }
    }
}

impl FromStr for DelaySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let n = |p: &str| p.parse::<u64>().map_err(|_| format!("`{p}` is not a tick count"));
        match parts.as_slice() {
            ["halt"] => Ok(DelaySpec::Halt),
            ["const", v] => Ok(DelaySpec::Const(n(v)?)),
            ["uniform", a, b] => {
                let (a, b) = (n(a)?, n(b)?);
                if a > b {
                    return Err("uniform bounds are reversed".into());
                }
                Ok(DelaySpec::Uniform(a, b))
            }
            _ => Err("expected const:N, uniform:A:B or halt".into()),
        }
    }
}

/// Explicit delay entries over a base cost model: one tick per environment
/// step and per learner update, everything else free.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DelayTable {
    entries: BTreeMap<(WorkerId, DelayOp), DelaySpec>,
}

impl DelayTable {
    pub fn base(op: DelayOp) -> DelaySpec {
        match op {
            DelayOp::EnvStep | DelayOp::Learn => DelaySpec::Const(1),
            _ => DelaySpec::Const(0),
        }
    }

    pub fn set(&mut self, worker: WorkerId, op: DelayOp, spec: DelaySpec) {
        self.entries.insert((worker, op), spec);
    }

    /// Effective spec: the worker's own entry, then the all-actors entry,
    /// then the base model.
    pub fn get(&self, worker: WorkerId, op: DelayOp) -> DelaySpec {
        self.explicit(worker, op).unwrap_or_else(|| Self::base(op))
    }

    /// The worker's own entry, then the all-actors entry; no base model.
    pub fn explicit(&self, worker: WorkerId, op: DelayOp) -> Option<DelaySpec> {
        if let Some(s) = self.entries.get(&(worker, op)) {
            return Some(*s);
        }
        match worker {
            WorkerId::Actor(_) => self.entries.get(&(WorkerId::Actors, op)).copied(),
            _ => None,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (WorkerId, DelayOp, DelaySpec)> + '_ {
        self.entries.iter().map(|(&(w, op), &s)| (w, op, s))
    }

    /// Every named actor exists.
    pub fn check_workers(&self, actors: usize) -> Result<(), WorkerId> {
        for &(w, _) in self.entries.keys() {
            if let WorkerId::Actor(i) = w {
                if i >= actors {
                    return Err(w);
                }
            }
        }
        Ok(())
    }
}

/// Seeded sampler over a [`DelayTable`]. Each (worker, operation) pair has
/// its own random stream, so the draws one worker sees do not depend on
/// how other workers interleave.
pub struct DelayHarness {
    table: DelayTable,
    actors: usize,
    seed: u64,
    with_base: bool,
    streams: HashMap<(WorkerId, DelayOp), DetRng>,
}

impl DelayHarness {
    pub fn new(table: DelayTable, actors: usize, seed: u64) -> Result<Self, DelayError> {
        table.check_workers(actors).map_err(DelayError::UnknownWorker)?;
        Ok(DelayHarness {
            table,
            actors,
            seed,
            with_base: true,
            streams: HashMap::new(),
        })
    }

    /// Operations without an explicit entry take no time (wall clock).
    pub fn without_base(mut self) -> Self {
        self.with_base = false;
        self
    }

    pub fn table(&self) -> &DelayTable {
        &self.table
    }

    /// Replace one entry.
    pub fn inject_delay(&mut self, worker: WorkerId, op: DelayOp, spec: DelaySpec) -> Result<(), DelayError> {
        if let WorkerId::Actor(i) = worker {
            if i >= self.actors {
                return Err(DelayError::UnknownWorker(worker));
            }
        }
        self.table.set(worker, op, spec);
        Ok(())
    }

    /// One draw; `None` means the operation halts forever.
    pub fn draw(&mut self, worker: WorkerId, op: DelayOp) -> Option<u64> {
        let spec = if self.with_base {
            self.table.get(worker, op)
        } else {
            self.table.explicit(worker, op).unwrap_or(DelaySpec::Const(0))
        };
        match spec {
            DelaySpec::Const(n) => Some(n),
            DelaySpec::Halt => None,
            DelaySpec::Uniform(a, b) => {
                let base = self.seed;
                let rng = self
                    .streams
                    .entry((worker, op))
                    .or_insert_with(|| seed::rng(seed::derive(seed::derive(base, worker.stream()), op as u64)));
                Some(rng.gen_range(a..=b))
            }
        }
    }

    /// Sum of `count` draws, `None` if any halts.
    pub fn draw_sum(&mut self, worker: WorkerId, op: DelayOp, count: u64) -> Option<u64> {
        let mut total = 0u64;
        for _ in 0..count {
            total = total.saturating_add(self.draw(worker, op)?);
        }
        Some(total)
    }
}
