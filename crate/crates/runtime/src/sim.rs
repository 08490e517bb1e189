//! Single-threaded discrete-event driver on the simulated clock.
//!
//! Time is counted in ticks (1000 ticks = 1 simulated second). Actor and
//! learner work is computed when an operation starts and becomes visible
//! when its event fires; every duration comes from the [`DelayHarness`].
//! Events at equal times fire in scheduling order.
//!
//! The learner is one server: it takes `learn` ticks per gradient
//! (gradient topologies) or per update (trajectory and replay topologies),
//! and publishes at the end of the service.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use ddrl_core::coord::{InferReply, InferRequest, InferenceBatcher, SubmitOutcome, TopologyKind};
use ddrl_core::learn::Trajectory;
use ddrl_core::policy::GradientUpdate;
use ddrl_core::seed::mix64;

use crate::actor::{CentralOutput, Payload, RolloutReport};
use crate::delay::{DelayHarness, DelayOp, WorkerId};
use crate::experiment::{DriverOutcome, RunError, ScheduleEntry, Session};
use crate::link::ActorLink;
use crate::metrics::MetricsCollector;

pub const TICKS_PER_SECOND: f64 = 1000.0;

enum Event {
    Deliver { actor: usize, report: RolloutReport },
    LearnerDone,
    Requests { actor: usize, requests: Vec<InferRequest> },
    BatchTimeout { generation: u64 },
    Replies { actor: usize, replies: Vec<InferReply> },
    StepDone { actor: usize, out: CentralOutput },
    Metrics,
}

impl Event {
    fn label(&self) -> (&'static str, usize) {
        match self {
            Event::Deliver { actor, .. } => ("deliver", *actor),
            Event::LearnerDone => ("learn", usize::MAX),
            Event::Requests { actor, .. } => ("requests", *actor),
            Event::BatchTimeout { .. } => ("batch_timeout", usize::MAX),
            Event::Replies { actor, .. } => ("replies", *actor),
            Event::StepDone { actor, .. } => ("step", *actor),
            Event::Metrics => ("metrics", usize::MAX),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ActorState {
    Running,
    /// Synchronous actor waiting for a version newer than `base`.
    Waiting { base: u64 },
    /// Outbox not accepted yet by a full learner queue.
    Blocked,
    Halted,
    Done,
}

struct Batcher {
    pending: Vec<(usize, Vec<InferRequest>)>,
    count: usize,
    generation: u64,
    armed: bool,
    batches: u64,
    requests: u64,
}

struct Sim<'a> {
    session: &'a mut Session,
    links: &'a mut [Box<dyn ActorLink>],
    metrics: &'a mut MetricsCollector,
    delays: DelayHarness,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    state: Vec<ActorState>,
    outbox: Vec<VecDeque<Trajectory>>,
    /// Requests held back while the outbox is blocked (central inference).
    held_requests: Vec<Option<Vec<InferRequest>>>,
    gradients: VecDeque<(GradientUpdate, u64)>,
    learner_busy: bool,
    reserved: u64,
    budget: u64,
    central_steps: Vec<u64>,
    /// Rollouts (or unroll-length central segments) completed per actor.
    started: Vec<u64>,
    kill: Option<(usize, u64)>,
    batcher: Batcher,
    inference: Option<InferenceBatcher>,
    schedule: Vec<ScheduleEntry>,
    digest: u64,
    last_work: u64,
    learner_index: usize,
}

impl Sim<'_> {
    fn push(&mut self, at: u64, event: Event) {
        self.heap.push(Reverse((at, self.seq)));
        self.events.insert(self.seq, event);
        self.seq += 1;
    }

    fn kind(&self) -> TopologyKind {
        self.session.cfg.topology.kind
    }

    fn draw(&mut self, worker: WorkerId, op: DelayOp, count: u64) -> Option<u64> {
        self.delays.draw_sum(worker, op, count)
    }

    fn link_err(&self, actor: usize, e: crate::link::LinkError) -> RunError {
        RunError::from_link(format!("actor{actor}"), e, Default::default())
    }

    fn maybe_kill(&mut self, actor: usize, done: u64) {
        if self.kill == Some((actor, done)) {
            self.links[actor].kill();
        }
    }

    fn start_rollout(&mut self, a: usize) -> Result<(), RunError> {
        if self.reserved >= self.budget {
            self.state[a] = ActorState::Done;
            return Ok(());
        }
        let w = WorkerId::Actor(a);
        let unroll = self.session.cfg.env.unroll_length as u64;
        let grad = self.kind().exchanges_gradients();
        let parts = [
            self.draw(w, DelayOp::Fetch, 1),
            self.draw(w, DelayOp::EnvStep, unroll),
            self.draw(w, DelayOp::Infer, unroll),
            if grad { self.draw(w, DelayOp::Grad, 1) } else { Some(0) },
            self.draw(w, DelayOp::Send, 1),
        ];
        let Some(duration) = parts.iter().try_fold(0u64, |acc, p| p.map(|d| acc.saturating_add(d))) else {
            self.state[a] = ActorState::Halted;
            return Ok(());
        };
        let job = self.session.job()?;
        self.maybe_kill(a, self.started[a]);
        let report = self.links[a].rollout(&job).map_err(|e| self.link_err(a, e))?;
        self.started[a] += 1;
        self.reserved += report.frames;
        self.session.rollouts += 1;
        self.metrics.begin_busy(a, self.now);
        self.state[a] = ActorState::Running;
        self.push(self.now + duration, Event::Deliver { actor: a, report });
        Ok(())
    }

    fn deliver(&mut self, a: usize, report: RolloutReport) -> Result<(), RunError> {
        self.metrics.end_busy(a, self.now);
        let trajectories = match &report.payload {
            Payload::Trajectories(t) => t.len() as u64,
            Payload::Gradient(_) => 0,
        };
        self.session.record(report.frames, report.samples, trajectories, &report.episodes);
        self.metrics.add_frames(report.frames);
        self.metrics.add_trajectories(trajectories);
        match report.payload {
            Payload::Gradient(update) => {
                let base = update.base_version;
                self.gradients.push_back((update, report.samples));
                if self.kind().is_sync() {
                    self.state[a] = ActorState::Waiting { base };
                } else {
                    self.start_rollout(a)?;
                }
            }
            Payload::Trajectories(t) => {
                self.outbox[a].extend(t);
                self.flush_outbox(a)?;
                if self.outbox[a].is_empty() {
                    self.start_rollout(a)?;
                } else {
                    self.state[a] = ActorState::Blocked;
                }
            }
        }
        self.kick_learner()
    }

    fn flush_outbox(&mut self, a: usize) -> Result<(), RunError> {
        if self.outbox[a].is_empty() {
            return Ok(());
        }
        let batch: Vec<Trajectory> = self.outbox[a].drain(..).collect();
        let offered = self.session.learner.offer(batch)?;
        self.outbox[a].extend(offered.rejected);
        Ok(())
    }

    fn kick_learner(&mut self) -> Result<(), RunError> {
        if self.learner_busy {
            return Ok(());
        }
        let work = if self.kind().exchanges_gradients() {
            !self.gradients.is_empty()
        } else {
            self.session.learner.ready()
        };
        if !work {
            return Ok(());
        }
        // A halted learner never finishes; the run then ends in a deadlock report.
        if let Some(d) = self.draw(WorkerId::Learner, DelayOp::Learn, 1) {
            self.learner_busy = true;
            self.metrics.begin_busy(self.learner_index, self.now);
            self.push(self.now + d, Event::LearnerDone);
        }
        Ok(())
    }

    fn learner_done(&mut self) -> Result<(), RunError> {
        self.learner_busy = false;
        self.metrics.end_busy(self.learner_index, self.now);
        let published = if self.kind().exchanges_gradients() {
            let (update, samples) = self.gradients.pop_front().expect("service started with a gradient");
            match self.session.learner.submit_gradient(update, samples, self.now)? {
                SubmitOutcome::Applied(v) => Some(v),
                _ => None,
            }
        } else {
            self.session.learner.step(self.now)?
        };
        if published.is_some() {
            self.metrics.add_update();
            self.session.published(self.now)?;
        }
        self.release_actors()?;
        self.kick_learner()
    }

    /// Unblock actors whose outbox now fits and wake synchronous waiters.
    fn release_actors(&mut self) -> Result<(), RunError> {
        let version = self.session.learner.version();
        for a in 0..self.state.len() {
            match self.state[a] {
                ActorState::Blocked => {
                    self.flush_outbox(a)?;
                    if self.outbox[a].is_empty() {
                        if let Some(requests) = self.held_requests[a].take() {
                            self.state[a] = ActorState::Running;
                            self.requests_arrive(a, requests)?;
                        } else {
                            self.start_rollout(a)?;
                        }
                    }
                }
                ActorState::Waiting { base } if version > base => self.start_rollout(a)?,
                _ => {}
            }
        }
        Ok(())
    }

    // Central inference.

    fn requests_arrive(&mut self, a: usize, requests: Vec<InferRequest>) -> Result<(), RunError> {
        self.batcher.count += requests.len();
        self.batcher.pending.push((a, requests));
        let max = self.session.cfg.topology.inference_batch_max;
        if self.batcher.count >= max {
            self.flush_batch()?;
        } else if !self.batcher.armed {
            self.batcher.armed = true;
            let generation = self.batcher.generation;
            let timeout = self.session.cfg.topology.inference_timeout;
            self.push(self.now + timeout, Event::BatchTimeout { generation });
        }
        Ok(())
    }

    fn flush_batch(&mut self) -> Result<(), RunError> {
        let max = self.session.cfg.topology.inference_batch_max;
        while !self.batcher.pending.is_empty() {
            let mut groups = Vec::new();
            let mut n = 0;
            while n < max && !self.batcher.pending.is_empty() {
                let g = self.batcher.pending.remove(0);
                n += g.1.len();
                groups.push(g);
            }
            self.batcher.count -= n;
            let flat: Vec<InferRequest> = groups.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
            let inference = self.inference.as_ref().expect("central inference batcher");
            let mut replies = inference
                .infer_batch(&flat)
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?
                .into_iter();
            self.batcher.batches += 1;
            self.batcher.requests += n as u64;
            let Some(infer) = self.draw(WorkerId::Learner, DelayOp::Infer, 1) else {
                continue;
            };
            for (a, reqs) in groups {
                let mine: Vec<InferReply> = replies.by_ref().take(reqs.len()).collect();
                if let Some(send) = self.draw(WorkerId::Actor(a), DelayOp::Send, 1) {
                    self.push(self.now + infer + send, Event::Replies { actor: a, replies: mine });
                } else {
                    self.state[a] = ActorState::Halted;
                }
            }
            if self.batcher.count < max {
                break;
            }
        }
        self.batcher.generation += 1;
        self.batcher.armed = false;
        if !self.batcher.pending.is_empty() {
            self.batcher.armed = true;
            let generation = self.batcher.generation;
            let timeout = self.session.cfg.topology.inference_timeout;
            self.push(self.now + timeout, Event::BatchTimeout { generation });
        }
        Ok(())
    }

    fn replies_arrive(&mut self, a: usize, replies: Vec<InferReply>) -> Result<(), RunError> {
        if self.reserved >= self.budget {
            self.state[a] = ActorState::Done;
            return Ok(());
        }
        let unroll = self.session.cfg.env.unroll_length as u64;
        let steps = self.central_steps[a];
        if steps.is_multiple_of(unroll) && self.session.two_player() {
            let opp = self.session.opponent()?;
            self.links[a].set_opponent(opp).map_err(|e| self.link_err(a, e))?;
        }
        let w = WorkerId::Actor(a);
        let (Some(env), Some(send)) = (self.draw(w, DelayOp::EnvStep, 1), self.draw(w, DelayOp::Send, 1)) else {
            self.state[a] = ActorState::Halted;
            return Ok(());
        };
        if steps.is_multiple_of(unroll) {
            self.maybe_kill(a, self.started[a]);
        }
        let out = self.links[a].central_step(replies).map_err(|e| self.link_err(a, e))?;
        self.reserved += out.frames;
        self.central_steps[a] += 1;
        if self.central_steps[a].is_multiple_of(unroll) {
            self.started[a] += 1;
            self.session.rollouts += 1;
        }
        self.metrics.begin_busy(a, self.now);
        self.push(self.now + env + send, Event::StepDone { actor: a, out });
        Ok(())
    }

    fn step_done(&mut self, a: usize, out: CentralOutput) -> Result<(), RunError> {
        self.metrics.end_busy(a, self.now);
        let samples: u64 = out.trajectories.iter().map(|t| t.len() as u64).sum();
        let n = out.trajectories.len() as u64;
        self.session.record(out.frames, samples, n, &out.episodes);
        self.metrics.add_frames(out.frames);
        self.metrics.add_trajectories(n);
        self.outbox[a].extend(out.trajectories);
        self.flush_outbox(a)?;
        if self.outbox[a].is_empty() {
            self.requests_arrive(a, out.requests)?;
        } else {
            self.state[a] = ActorState::Blocked;
            self.held_requests[a] = Some(out.requests);
        }
        self.kick_learner()
    }

    fn start(&mut self) -> Result<(), RunError> {
        let n = self.links.len();
        if self.kind() == TopologyKind::CentralInference {
            for a in 0..n {
                if self.budget == 0 {
                    self.state[a] = ActorState::Done;
                    continue;
                }
                let requests = self.links[a].central_begin().map_err(|e| self.link_err(a, e))?;
                match self.draw(WorkerId::Actor(a), DelayOp::Send, 1) {
                    Some(send) => self.push(self.now + send, Event::Requests { actor: a, requests }),
                    None => self.state[a] = ActorState::Halted,
                }
            }
        } else {
            for a in 0..n {
                self.start_rollout(a)?;
            }
        }
        if !self.heap.is_empty() {
            let t = self.metrics.next_tick();
            self.push(t, Event::Metrics);
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), RunError> {
        self.start()?;
        while let Some(Reverse((time, seq))) = self.heap.pop() {
            let event = self.events.remove(&seq).expect("scheduled event");
            self.now = time;
            let (kind, worker) = event.label();
            self.digest = mix64(self.digest ^ time) ^ mix64(seq ^ ((worker as u64) << 8) ^ kind.len() as u64);
            self.schedule.push(ScheduleEntry { time, kind, worker });
            if !matches!(event, Event::Metrics) {
                self.last_work = time;
            }
            match event {
                Event::Deliver { actor, report } => self.deliver(actor, report)?,
                Event::LearnerDone => self.learner_done()?,
                Event::Requests { actor, requests } => self.requests_arrive(actor, requests)?,
                Event::BatchTimeout { generation } => {
                    if generation == self.batcher.generation && !self.batcher.pending.is_empty() {
                        self.flush_batch()?;
                    }
                }
                Event::Replies { actor, replies } => self.replies_arrive(actor, replies)?,
                Event::StepDone { actor, out } => self.step_done(actor, out)?,
                Event::Metrics => {
                    let depth = self.session.learner.queue_depth() as u64 + self.gradients.len() as u64;
                    let lag = self.session.learner.lag_records();
                    self.metrics.tick(self.now, depth, &lag).map_err(RunError::io)?;
                    if !self.heap.is_empty() {
                        let t = self.metrics.next_tick();
                        self.push(t, Event::Metrics);
                    }
                }
            }
        }
        if self.reserved < self.budget {
            let names = |want: fn(&ActorState) -> bool, st: &[ActorState]| {
                st.iter()
                    .enumerate()
                    .filter(|(_, s)| want(s))
                    .map(|(i, _)| format!("actor{i}"))
                    .collect::<Vec<_>>()
            };
            return Err(RunError::Deadlock {
                version: self.session.learner.version(),
                waiting: names(|s| matches!(s, ActorState::Waiting { .. } | ActorState::Blocked), &self.state),
                halted: names(|s| *s == ActorState::Halted, &self.state),
                partial: Box::default(),
            });
        }
        Ok(())
    }
}

/// Drive the whole run on the simulated clock.
pub(crate) fn drive(
    session: &mut Session,
    links: &mut [Box<dyn ActorLink>],
    metrics: &mut MetricsCollector,
) -> DriverOutcome {
    let n = links.len();
    let cfg = &session.cfg;
    let delays = match DelayHarness::new(cfg.delays.clone(), n, ddrl_core::seed::derive(cfg.seed, 0xDE1A)) {
        Ok(d) => d,
        Err(e) => {
            return DriverOutcome {
                elapsed: 0,
                units_per_second: TICKS_PER_SECOND,
                schedule: Vec::new(),
                digest: None,
                inference_batches: (0, 0),
                failure: Some(RunError::ConfigInvalid(crate::config::ConfigError::UnknownWorker(e.to_string()))),
            }
        }
    };
    let budget = cfg.run.frames;
    let kill = cfg.faults.kill_actor.map(|a| (a, cfg.faults.kill_after));
    let inference = (cfg.topology.kind == TopologyKind::CentralInference).then(|| {
        InferenceBatcher::new(
            session.learner.store().clone(),
            cfg.topology.inference_batch_max,
            std::time::Duration::from_millis(cfg.topology.inference_timeout),
        )
    });
    let mut sim = Sim {
        session,
        links,
        metrics,
        delays,
        now: 0,
        seq: 0,
        heap: BinaryHeap::new(),
        events: BTreeMap::new(),
        state: vec![ActorState::Running; n],
        outbox: vec![VecDeque::new(); n],
        held_requests: vec![None; n],
        gradients: VecDeque::new(),
        learner_busy: false,
        reserved: 0,
        budget,
        central_steps: vec![0; n],
        started: vec![0; n],
        kill,
        batcher: Batcher {
            pending: Vec::new(),
            count: 0,
            generation: 0,
            armed: false,
            batches: 0,
            requests: 0,
        },
        inference,
        schedule: Vec::new(),
        digest: 0,
        last_work: 0,
        learner_index: n,
    };
    let failure = sim.run().err();
    DriverOutcome {
        elapsed: sim.last_work,
        units_per_second: TICKS_PER_SECOND,
        digest: Some(sim.digest),
        inference_batches: (sim.batcher.batches, sim.batcher.requests),
        schedule: std::mem::take(&mut sim.schedule),
        failure,
    }
}
