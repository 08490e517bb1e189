//! Threaded driver on the wall clock: one thread per actor link, the
//! learner on the calling thread. Times are milliseconds since the start.
//!
//! Only explicit delay entries are slept; the base cost model is a
//! simulated-clock notion.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use ddrl_core::coord::{InferReply, InferRequest, InferenceBatcher, SubmitOutcome, TopologyKind};
use ddrl_core::learn::Trajectory;
use ddrl_core::policy::GradientUpdate;
use parking_lot::Mutex;

use crate::actor::Payload;
use crate::delay::{DelayHarness, DelayOp, WorkerId};
use crate::experiment::{DriverOutcome, RunError, Session};
use crate::link::ActorLink;
use crate::metrics::MetricsCollector;

const POLL: Duration = Duration::from_millis(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Running,
    Waiting,
    Blocked,
    Halted,
    Done,
}

struct Shared<'a> {
    session: &'a mut Session,
    metrics: &'a mut MetricsCollector,
    delays: DelayHarness,
    gradients: VecDeque<(GradientUpdate, u64)>,
    reserved: u64,
    phases: Vec<Phase>,
    failure: Option<RunError>,
    last_progress: u64,
}

struct Ctx<'a> {
    shared: Mutex<Shared<'a>>,
    stop: AtomicBool,
    start: Instant,
    budget: u64,
    kind: TopologyKind,
    unroll: u64,
    frames_estimate: u64,
    kill: Option<(usize, u64)>,
    inference: Option<InferenceBatcher>,
}

impl Ctx<'_> {
    fn now(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn fail(&self, e: RunError) {
        let mut s = self.shared.lock();
        s.failure.get_or_insert(e);
        self.stop.store(true, Ordering::SeqCst);
    }

    fn set_phase(&self, a: usize, p: Phase) {
        self.shared.lock().phases[a] = p;
    }

    /// Sleep `total` ms in slices; `None` parks the actor as halted until stop.
    fn pause(&self, a: usize, total: Option<u64>) -> bool {
        let Some(ms) = total else {
            self.set_phase(a, Phase::Halted);
            while !self.stopped() {
                thread::sleep(POLL * 10);
            }
            return false;
        };
        let until = Instant::now() + Duration::from_millis(ms);
        while Instant::now() < until {
            if self.stopped() {
                return false;
            }
            thread::sleep((until - Instant::now()).min(POLL * 10));
        }
        !self.stopped()
    }

    fn draw(&self, a: usize, ops: &[(DelayOp, u64)]) -> Option<u64> {
        let mut s = self.shared.lock();
        let mut total = 0u64;
        for &(op, n) in ops {
            total = total.saturating_add(s.delays.draw_sum(WorkerId::Actor(a), op, n)?);
        }
        Some(total)
    }

    /// Reserve budget for the next unit of work; false once the budget is spent.
    fn reserve(&self, a: usize, frames: u64) -> bool {
        let mut s = self.shared.lock();
        if s.reserved >= self.budget {
            s.phases[a] = Phase::Done;
            return false;
        }
        s.reserved += frames;
        true
    }

    fn link_err(&self, a: usize, e: crate::link::LinkError) {
        if !self.stopped() {
            self.fail(RunError::from_link(format!("actor{a}"), e, Default::default()));
        }
    }

    /// Hand trajectories to the learner, retrying while the queue is full.
    fn deliver(&self, a: usize, mut outbox: Vec<Trajectory>) -> bool {
        loop {
            {
                let mut s = self.shared.lock();
                match s.session.learner.offer(outbox) {
                    Ok(offered) if offered.rejected.is_empty() => {
                        s.phases[a] = Phase::Running;
                        return true;
                    }
                    Ok(offered) => {
                        outbox = offered.rejected;
                        s.phases[a] = Phase::Blocked;
                    }
                    Err(e) => {
                        drop(s);
                        self.fail(e.into());
                        return false;
                    }
                }
            }
            if self.stopped() {
                return false;
            }
            thread::sleep(POLL);
        }
    }
}

fn local_actor(a: usize, link: &mut Box<dyn ActorLink>, ctx: &Ctx<'_>) {
    let mut completed = 0u64;
    while !ctx.stopped() {
        if !ctx.reserve(a, ctx.frames_estimate) {
            return;
        }
        let job = match ctx.shared.lock().session.job() {
            Ok(j) => j,
            Err(e) => return ctx.fail(e),
        };
        let grad = u64::from(ctx.kind.exchanges_gradients());
        let delay = ctx.draw(
            a,
            &[
                (DelayOp::Fetch, 1),
                (DelayOp::EnvStep, ctx.unroll),
                (DelayOp::Infer, ctx.unroll),
                (DelayOp::Grad, grad),
                (DelayOp::Send, 1),
            ],
        );
        ctx.shared.lock().metrics.begin_busy(a, ctx.now());
        if !ctx.pause(a, delay) {
            return;
        }
        if ctx.kill == Some((a, completed)) {
            link.kill();
        }
        let report = match link.rollout(&job) {
            Ok(r) => r,
            Err(e) => return ctx.link_err(a, e),
        };
        completed += 1;
        let trajectories = match &report.payload {
            Payload::Trajectories(t) => t.len() as u64,
            Payload::Gradient(_) => 0,
        };
        let now = ctx.now();
        {
            let mut s = ctx.shared.lock();
            s.reserved = s.reserved + report.frames - ctx.frames_estimate;
            s.session.rollouts += 1;
            s.session.record(report.frames, report.samples, trajectories, &report.episodes);
            s.metrics.end_busy(a, now);
            s.metrics.add_frames(report.frames);
            s.metrics.add_trajectories(trajectories);
            s.last_progress = now;
        }
        match report.payload {
            Payload::Gradient(update) => {
                let base = update.base_version;
                ctx.shared.lock().gradients.push_back((update, report.samples));
                if ctx.kind.is_sync() {
                    ctx.set_phase(a, Phase::Waiting);
                    while ctx.shared.lock().session.learner.version() <= base {
                        if ctx.stopped() {
                            return;
                        }
                        thread::sleep(POLL);
                    }
                    ctx.set_phase(a, Phase::Running);
                }
            }
            Payload::Trajectories(t) => {
                if !ctx.deliver(a, t) {
                    return;
                }
            }
        }
    }
}

fn central_actor(a: usize, link: &mut Box<dyn ActorLink>, ctx: &Ctx<'_>) {
    let batcher = ctx.inference.as_ref().expect("central inference batcher");
    let mut requests = match link.central_begin() {
        Ok(r) => r,
        Err(e) => return ctx.link_err(a, e),
    };
    let (mut steps, mut completed) = (0u64, 0u64);
    while !ctx.stopped() {
        let copies = requests.len() as u64;
        if !ctx.reserve(a, copies) {
            return;
        }
        if steps % ctx.unroll == 0 {
            let opponent = {
                let mut s = ctx.shared.lock();
                if s.session.two_player() {
                    match s.session.opponent() {
                        Ok(o) => Some(o),
                        Err(e) => {
                            drop(s);
                            return ctx.fail(e);
                        }
                    }
                } else {
                    None
                }
            };
            if let Some(o) = opponent {
                if let Err(e) = link.set_opponent(o) {
                    return ctx.link_err(a, e);
                }
            }
            if ctx.kill == Some((a, completed)) {
                link.kill();
            }
        }
        let replies = match infer_all(batcher, requests) {
            Ok(r) => r,
            Err(e) => {
                if !ctx.stopped() {
                    ctx.fail(e.into());
                }
                return;
            }
        };
        let delay = ctx.draw(a, &[(DelayOp::EnvStep, 1), (DelayOp::Send, 1)]);
        ctx.shared.lock().metrics.begin_busy(a, ctx.now());
        if !ctx.pause(a, delay) {
            return;
        }
        let out = match link.central_step(replies) {
            Ok(o) => o,
            Err(e) => return ctx.link_err(a, e),
        };
        steps += 1;
        let now = ctx.now();
        {
            let mut s = ctx.shared.lock();
            if steps % ctx.unroll == 0 {
                completed += 1;
                s.session.rollouts += 1;
            }
            s.reserved = s.reserved + out.frames - copies;
            let samples = out.trajectories.iter().map(|t| t.len() as u64).sum();
            let n = out.trajectories.len() as u64;
            s.session.record(out.frames, samples, n, &out.episodes);
            s.metrics.end_busy(a, now);
            s.metrics.add_frames(out.frames);
            s.metrics.add_trajectories(n);
            s.last_progress = now;
        }
        if !ctx.deliver(a, out.trajectories) {
            return;
        }
        requests = out.requests;
    }
}

/// Submit every request from its own thread so they share server batches.
fn infer_all(batcher: &InferenceBatcher, requests: Vec<InferRequest>) -> Result<Vec<InferReply>, ddrl_core::coord::CoordError> {
    thread::scope(|s| {
        let handles: Vec<_> = requests
            .into_iter()
            .map(|r| s.spawn(move || batcher.submit(r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("inference thread panicked"))
            .collect()
    })
}

enum Work {
    Gradient(GradientUpdate, u64),
    Step,
}

/// One learner iteration; returns whether any work was done.
fn learner_turn(ctx: &Ctx<'_>, learner_index: usize, halted: &mut bool) -> Result<bool, RunError> {
    if *halted {
        return Ok(false);
    }
    let (work, delay) = {
        let mut s = ctx.shared.lock();
        let work = if ctx.kind.exchanges_gradients() {
            s.gradients.pop_front().map(|(u, n)| Work::Gradient(u, n))
        } else if s.session.learner.ready() {
            Some(Work::Step)
        } else {
            None
        };
        let Some(work) = work else { return Ok(false) };
        let delay = s.delays.draw(WorkerId::Learner, DelayOp::Learn);
        s.metrics.begin_busy(learner_index, ctx.now());
        (work, delay)
    };
    let Some(ms) = delay else {
        *halted = true;
        return Ok(false);
    };
    thread::sleep(Duration::from_millis(ms));
    let now = ctx.now();
    let mut s = ctx.shared.lock();
    let published = match work {
        Work::Gradient(update, samples) => match s.session.learner.submit_gradient(update, samples, now)? {
            SubmitOutcome::Applied(v) => Some(v),
            _ => None,
        },
        Work::Step => s.session.learner.step(now)?,
    };
    s.metrics.end_busy(learner_index, now);
    if published.is_some() {
        s.metrics.add_update();
        s.session.published(now)?;
        s.last_progress = now;
    }
    Ok(true)
}

/// Learner loop plus metrics and deadlock supervision; returns when every
/// actor is done or the run failed.
fn supervise(ctx: &Ctx<'_>, timeout: u64, actors: usize) {
    let mut halted = false;
    loop {
        if ctx.stopped() {
            return;
        }
        let worked = match learner_turn(ctx, actors, &mut halted) {
            Ok(w) => w,
            Err(e) => return ctx.fail(e),
        };
        let now = ctx.now();
        let mut s = ctx.shared.lock();
        if now >= s.metrics.next_tick() {
            let depth = s.session.learner.queue_depth() as u64 + s.gradients.len() as u64;
            let lag = s.session.learner.lag_records();
            if let Err(e) = s.metrics.tick(now, depth, &lag) {
                drop(s);
                return ctx.fail(RunError::io(e));
            }
        }
        let idle_learner = !worked && (halted || (s.gradients.is_empty() && !s.session.learner.ready()));
        let stuck = !s.phases.contains(&Phase::Running);
        if stuck && idle_learner && s.reserved >= ctx.budget {
            return;
        }
        if stuck && idle_learner && now.saturating_sub(s.last_progress) > timeout {
            let names = |want: &[Phase]| {
                s.phases
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| want.contains(p))
                    .map(|(i, _)| format!("actor{i}"))
                    .collect::<Vec<_>>()
            };
            let e = RunError::Deadlock {
                version: s.session.learner.version(),
                waiting: names(&[Phase::Waiting, Phase::Blocked]),
                halted: names(&[Phase::Halted]),
                partial: Box::default(),
            };
            drop(s);
            return ctx.fail(e);
        }
        drop(s);
        if !worked {
            thread::sleep(POLL);
        }
    }
}

/// Drive the run on real threads and real time.
pub(crate) fn drive(
    session: &mut Session,
    links: &mut [Box<dyn ActorLink>],
    metrics: &mut MetricsCollector,
) -> DriverOutcome {
    let n = links.len();
    let cfg = session.cfg.clone();
    let delays = match DelayHarness::new(cfg.delays.clone(), n, ddrl_core::seed::derive(cfg.seed, 0xDE1A)) {
        Ok(d) => d.without_base(),
        Err(e) => {
            return DriverOutcome {
                elapsed: 0,
                units_per_second: 1000.0,
                schedule: Vec::new(),
                digest: None,
                inference_batches: (0, 0),
                failure: Some(RunError::ConfigInvalid(crate::config::ConfigError::UnknownWorker(e.to_string()))),
            }
        }
    };
    let central = cfg.topology.kind == TopologyKind::CentralInference;
    let inference = central.then(|| {
        InferenceBatcher::new(
            session.learner.store().clone(),
            cfg.topology.inference_batch_max,
            Duration::from_millis(cfg.topology.inference_timeout),
        )
    });
    let ctx = Ctx {
        shared: Mutex::new(Shared {
            session,
            metrics,
            delays,
            gradients: VecDeque::new(),
            reserved: 0,
            phases: vec![Phase::Running; n],
            failure: None,
            last_progress: 0,
        }),
        stop: AtomicBool::new(false),
        start: Instant::now(),
        budget: cfg.run.frames,
        kind: cfg.topology.kind,
        unroll: cfg.env.unroll_length as u64,
        frames_estimate: (cfg.env.unroll_length * cfg.env.copies) as u64,
        kill: cfg.faults.kill_actor.map(|a| (a, cfg.faults.kill_after)),
        inference,
    };
    thread::scope(|scope| {
        for (a, link) in links.iter_mut().enumerate() {
            let ctx = &ctx;
            scope.spawn(move || {
                if central {
                    central_actor(a, link, ctx)
                } else {
                    local_actor(a, link, ctx)
                }
            });
        }
        supervise(&ctx, cfg.run.deadlock_timeout_ms, n);
        ctx.stop.store(true, Ordering::SeqCst);
        if let Some(b) = &ctx.inference {
            b.shutdown();
        }
    });
    let elapsed = ctx.now();
    let inference_batches = ctx
        .inference
        .as_ref()
        .map(|b| {
            let s = b.stats();
            (s.calls, s.requests)
        })
        .unwrap_or((0, 0));
    let failure = ctx.shared.into_inner().failure;
    DriverOutcome {
        elapsed,
        units_per_second: 1000.0,
        schedule: Vec::new(),
        digest: None,
        inference_batches,
        failure,
    }
}
