use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use super::{CoordError, ParameterStore};
use crate::policy::infer;
use crate::seed;
use crate::PlayerId;

/// One actor-side inference request; the actor never holds parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct InferRequest {
    pub player_id: PlayerId,
    pub observation: Vec<f64>,
    pub mask: Vec<bool>,
    /// Seeds the sampling stream so the reply does not depend on batching.
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferReply {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub version: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub calls: u64,
    pub requests: u64,
    pub sizes: Vec<usize>,
}

struct Queue {
    next_ticket: u64,
    pending: Vec<(u64, InferRequest)>,
    done: HashMap<u64, Result<InferReply, CoordError>>,
    leader: bool,
    shutdown: bool,
}

/// Learner-side batched inference.
///
/// [`InferenceBatcher::infer_batch`] answers an already assembled batch (used
/// by the simulated clock). [`InferenceBatcher::submit`] is the blocking
/// threaded path: the first waiting caller becomes leader and flushes when
/// the batch fills or the timeout elapses.
pub struct InferenceBatcher {
    store: Arc<ParameterStore>,
    batch_max: usize,
    timeout: Duration,
    stats: Mutex<BatchStats>,
    queue: Mutex<Queue>,
    wake: Condvar,
}

impl InferenceBatcher {
    pub fn new(store: Arc<ParameterStore>, batch_max: usize, timeout: Duration) -> Self {
        InferenceBatcher {
            store,
            batch_max: batch_max.max(1),
            timeout,
            stats: Mutex::new(BatchStats::default()),
            queue: Mutex::new(Queue {
                next_ticket: 0,
                pending: Vec::new(),
                done: HashMap::new(),
                leader: false,
                shutdown: false,
            }),
            wake: Condvar::new(),
        }
    }

    pub fn stats(&self) -> BatchStats {
        self.stats.lock().clone()
    }

    pub fn batch_max(&self) -> usize {
        self.batch_max
    }

    /// One batched inference call over `requests` at the current snapshots.
    pub fn infer_batch(&self, requests: &[InferRequest]) -> Vec<Result<InferReply, CoordError>> {
        {
            let mut s = self.stats.lock();
            s.calls += 1;
            s.requests += requests.len() as u64;
            s.sizes.push(requests.len());
        }
        requests.iter().map(|r| self.answer(r)).collect()
    }

    fn answer(&self, r: &InferRequest) -> Result<InferReply, CoordError> {
        let params = self.store.latest(&r.player_id)?;
        let mut rng = seed::rng(r.rng_seed);
        let out = infer(&params, &r.observation, &r.mask, &mut rng)?;
        Ok(InferReply {
            action: out.action,
            log_prob: out.log_prob,
            value: out.value,
            version: params.version,
        })
    }

    /// Blocking request; returns once the batch containing it is answered.
    pub fn submit(&self, request: InferRequest) -> Result<InferReply, CoordError> {
        let mut q = self.queue.lock();
        if q.shutdown {
            return Err(CoordError::Timeout);
        }
        let ticket = q.next_ticket;
        q.next_ticket += 1;
        q.pending.push((ticket, request));
        self.wake.notify_all();
        loop {
            if let Some(r) = q.done.remove(&ticket) {
                return r;
            }
            if q.shutdown {
                return Err(CoordError::Timeout);
            }
            if !q.leader {
                q.leader = true;
                let deadline = Instant::now() + self.timeout;
                while q.pending.len() < self.batch_max && !q.shutdown {
                    if self.wake.wait_until(&mut q, deadline).timed_out() {
                        break;
                    }
                }
                let n = q.pending.len().min(self.batch_max);
                let batch: Vec<(u64, InferRequest)> = q.pending.drain(..n).collect();
                let reqs: Vec<InferRequest> = batch.iter().map(|(_, r)| r.clone()).collect();
                let replies = self.infer_batch(&reqs);
                for ((t, _), r) in batch.into_iter().zip(replies) {
                    q.done.insert(t, r);
                }
                q.leader = false;
                self.wake.notify_all();
                continue;
            }
            self.wake.wait(&mut q);
        }
    }

    /// Fail every waiting and future request.
    pub fn shutdown(&self) {
        let mut q = self.queue.lock();
        q.shutdown = true;
        self.wake.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use std::thread;

    use super::*;
    use crate::policy::{Arch, PolicyParameters};

    fn batcher(max: usize, timeout_ms: u64) -> Arc<InferenceBatcher> {
        let store = Arc::new(ParameterStore::new());
        store
            .publish(PolicyParameters::init("p".into(), Arch::Linear { inputs: 2, actions: 3 }, 4))
            .unwrap();
        Arc::new(InferenceBatcher::new(store, max, Duration::from_millis(timeout_ms)))
    }

    fn req(seed: u64) -> InferRequest {
        InferRequest {
            player_id: "p".into(),
            observation: vec![0.5, -1.0],
            mask: vec![true, true, false],
            rng_seed: seed,
        }
    }

    #[test]
    fn three_requests_one_call() {
        let b = batcher(3, 10_000);
        let handles: Vec<_> = (0..3)
            .map(|i| {
                let b = b.clone();
                thread::spawn(move || b.submit(req(i)).unwrap())
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap().action < 2);
        }
        let s = b.stats();
        assert_eq!((s.calls, s.sizes), (1, vec![3]));
    }

    #[test]
    fn lone_request_flushes_on_timeout() {
        let b = batcher(8, 20);
        b.submit(req(0)).unwrap();
        assert_eq!(b.stats().sizes, vec![1]);
    }

    #[test]
    fn matches_local_inference() {
        let b = batcher(1, 1);
        let reply = b.submit(req(42)).unwrap();
        let params = b.store.latest(&"p".into()).unwrap();
        let local = infer(&params, &[0.5, -1.0], &[true, true, false], &mut seed::rng(42)).unwrap();
        assert_eq!((reply.action, reply.log_prob, reply.value), (local.action, local.log_prob, local.value));
    }

    #[test]
    fn shutdown_fails_requests() {
        let b = batcher(4, 10);
        b.shutdown();
        assert_eq!(b.submit(req(0)), Err(CoordError::Timeout));
    }
}
