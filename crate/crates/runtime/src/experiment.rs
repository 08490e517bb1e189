//! Experiment wiring shared by both clocks: the learner, the league, the
//! actor links and the output files.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ddrl_core::coord::{CoordError, LagRecord};
use ddrl_core::league::{League, LeagueError, Pairing, Role};
use ddrl_core::policy::PolicyParameters;
use ddrl_core::seed::{self, DetRng};
use ddrl_core::PlayerId;
use thiserror::Error;

use crate::actor::{evaluate_policy, ActorError, ActorSettings, EpisodeStat, RolloutJob};
use crate::config::{Clock, ConfigError, EvalPairing, ExperimentConfig, Spawn, Transport};
use crate::learner::Learner;
use crate::link::{spawn_remote, ActorLink, Launch, LinkError, LocalLink};
use crate::metrics::{MetricsCollector, MetricsRecord, RunSummary};
use crate::{sim, wall};

pub const MAIN_PLAYER: &str = "main";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective.cfg";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("worker {worker} crashed: {reason}")]
    WorkerCrashed {
        worker: String,
        reason: String,
        partial: Box<RunSummary>,
    },
    #[error("deadlock at version {version}: waiting {waiting:?}, halted {halted:?}")]
    Deadlock {
        version: u64,
        waiting: Vec<String>,
        halted: Vec<String>,
        partial: Box<RunSummary>,
    },
    #[error("benchmark rows differ in {0}")]
    HeterogeneousEnvs(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error(transparent)]
    League(#[from] LeagueError),
    #[error(transparent)]
    Actor(#[from] ActorError),
}

impl RunError {
    pub fn io(e: impl std::fmt::Display) -> Self {
        RunError::Io(e.to_string())
    }

    pub(crate) fn from_link(worker: String, e: LinkError, partial: RunSummary) -> Self {
        match e {
            LinkError::Actor(a) => RunError::Actor(a),
            other => RunError::WorkerCrashed {
                worker,
                reason: other.to_string(),
                partial: Box::new(partial),
            },
        }
    }
}

/// Knobs that are not part of the experiment config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Binary used for `spawn = process` socket actors; defaults to the
    /// running executable.
    pub actor_exe: Option<PathBuf>,
    /// Write metrics, summary, league and effective config under `run.output_dir`.
    pub write_files: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub time: u64,
    pub kind: &'static str,
    pub worker: usize,
}

#[derive(Debug)]
pub struct RunReport {
    pub summary: RunSummary,
    pub metrics: Vec<MetricsRecord>,
    pub final_params: Arc<PolicyParameters>,
    pub league: League,
    pub episodes: Vec<EpisodeStat>,
    pub lag: Vec<LagRecord>,
    /// Simulated-clock event log (empty on the wall clock).
    pub schedule: Vec<ScheduleEntry>,
    /// Final-policy evaluation episodes (single-player environments).
    pub evaluation: Vec<EpisodeStat>,
}

/// Run state shared by the clock drivers.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub learner: Learner,
    pub league: League,
    pub main: PlayerId,
    two_player: bool,
    league_rng: DetRng,
    eval_rounds: u64,
    pub frames: u64,
    pub rollouts: u64,
    pub trajectories: u64,
    pub samples_emitted: u64,
    pub episodes: Vec<EpisodeStat>,
    pub publish_times: Vec<u64>,
}

impl Session {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, RunError> {
        let main = PlayerId::new(MAIN_PLAYER);
        let arch = cfg.arch()?;
        let initial = PolicyParameters::init(main.clone(), arch, seed::derive(cfg.seed, 0x1417));
        let learner = Learner::new(&cfg, initial.clone())?;
        let mut league = League::new(cfg.env.id);
        league.k_factor = cfg.league.k_factor;
        league.initial_rating = cfg.league.initial_rating;
        league.add_player(main.clone(), Role::Main, initial)?;
        league.snapshot_generation(&main)?;
        Ok(Session {
            two_player: cfg.env_spec().players > 1,
            league_rng: seed::rng(seed::derive(cfg.seed, 0x1EA6)),
            main,
            learner,
            league,
            eval_rounds: 0,
            frames: 0,
            rollouts: 0,
            trajectories: 0,
            samples_emitted: 0,
            episodes: Vec::new(),
            publish_times: Vec::new(),
            cfg,
        })
    }

    pub fn two_player(&self) -> bool {
        self.two_player
    }

    /// Opponent for the next rollout; `None` in single-player environments.
    pub fn opponent(&mut self) -> Result<Option<Arc<PolicyParameters>>, RunError> {
        if !self.two_player {
            return Ok(None);
        }
        let o = self
            .league
            .sample_opponent(&self.main, self.cfg.league.strategy, &mut self.league_rng)?;
        if o.generation.is_none() && o.player_id == self.main {
            return Ok(Some(self.learner.current()));
        }
        Ok(Some(self.league.opponent_params(&o)?))
    }

    pub fn job(&mut self) -> Result<RolloutJob, RunError> {
        Ok(RolloutJob {
            behavior: self.learner.current(),
            opponent: self.opponent()?,
        })
    }

    pub fn record(&mut self, frames: u64, samples: u64, trajectories: u64, episodes: &[EpisodeStat]) {
        self.frames += frames;
        self.samples_emitted += samples;
        self.trajectories += trajectories;
        self.episodes.extend_from_slice(episodes);
    }

    /// Bookkeeping after the learner published a version at `now`.
    pub fn published(&mut self, now: u64) -> Result<(), RunError> {
        self.publish_times.push(now);
        let every = self.cfg.league.snapshot_every;
        let updates = self.learner.updates();
        if every > 0 && updates.is_multiple_of(every) {
            self.snapshot()?;
        }
        Ok(())
    }

    fn snapshot(&mut self) -> Result<(), RunError> {
        self.league.set_live(&self.main, self.learner.current())?;
        self.league.snapshot_generation(&self.main)?;
        if self.cfg.league.eval_games > 0 {
            let pairing = match self.cfg.league.eval_pairing {
                EvalPairing::Latest => Pairing::Latest(self.main.clone()),
                EvalPairing::AllPairs => Pairing::AllPairs,
                EvalPairing::VsBaselines => Pairing::VsBaselines,
            };
            let round_seed = seed::derive(seed::derive(self.cfg.seed, 0xE7A1), self.eval_rounds);
            self.eval_rounds += 1;
            self.league.evaluation_round(&pairing, self.cfg.league.eval_games, round_seed)?;
        }
        Ok(())
    }

    pub fn summary(&self, elapsed: u64, units_per_second: f64) -> RunSummary {
        let current = self.learner.current();
        let samples = self.learner.samples();
        let lag = ddrl_core::coord::lag_stats(&self.learner.lag_records());
        let secs = elapsed as f64 / units_per_second;
        let rate = |n: u64| if secs > 0.0 { n as f64 / secs } else { 0.0 };
        let mut epochs = Vec::with_capacity(self.publish_times.len());
        let mut prev = 0;
        for &t in &self.publish_times {
            epochs.push(t - prev);
            prev = t;
        }
        let mean_return = if self.episodes.is_empty() {
            0.0
        } else {
            self.episodes.iter().map(|e| e.ret).sum::<f64>() / self.episodes.len() as f64
        };
        RunSummary {
            topology: self.cfg.topology.kind.to_string(),
            env: self.cfg.env.id.to_string(),
            seed: self.cfg.seed,
            clock: match self.cfg.run.clock {
                Clock::Simulated => "simulated".into(),
                Clock::Wall => "wall".into(),
            },
            transport: match self.cfg.run.transport {
                Transport::InProcess => "in_process".into(),
                Transport::Sockets => "sockets".into(),
            },
            frames: self.frames,
            rollouts: self.rollouts,
            trajectories: self.trajectories,
            episodes: self.episodes.len() as u64,
            mean_episode_return: mean_return,
            samples_emitted: self.samples_emitted,
            samples_consumed: samples.consumed,
            samples_queued: samples.queued,
            samples_dropped: samples.dropped,
            updates: self.learner.updates(),
            elapsed_seconds: secs,
            frames_per_second: rate(self.frames),
            trajectories_per_second: rate(self.trajectories),
            updates_per_second: rate(self.learner.updates()),
            mean_lag: lag.mean,
            max_lag: lag.max.unwrap_or(0),
            final_version: current.version,
            final_checksum: current.checksum(),
            epoch_durations: epochs,
            league_generations: self.league.all_generations().len(),
            league_matches: self.league.matches().len(),
            ..RunSummary::default()
        }
    }
}

pub(crate) fn worker_names(actors: usize) -> Vec<String> {
    (0..actors).map(|i| format!("actor{i}")).chain(["learner".to_string()]).collect()
}

fn make_links(cfg: &ExperimentConfig, opts: &RunOptions, main: &PlayerId) -> Result<Vec<Box<dyn ActorLink>>, RunError> {
    let n = cfg.topology.actor_count;
    let settings: Vec<ActorSettings> = (0..n).map(|i| ActorSettings::from_config(cfg, i, main.clone())).collect();
    if cfg.run.transport == Transport::InProcess {
        return Ok(settings
            .into_iter()
            .map(|s| Box::new(LocalLink::new(s)) as Box<dyn ActorLink>)
            .collect());
    }
    let launch = match cfg.run.spawn {
        Spawn::Thread => Launch::Thread,
        Spawn::Process => {
            let exe = match &opts.actor_exe {
                Some(p) => p.clone(),
                None => std::env::current_exe().map_err(RunError::io)?,
            };
            fs::create_dir_all(&cfg.run.output_dir).map_err(RunError::io)?;
            let config = cfg.run.output_dir.join(EFFECTIVE_CONFIG_FILE);
            fs::write(&config, cfg.to_text()).map_err(RunError::io)?;
            Launch::Process { exe, config }
        }
    };
    let listener = TcpListener::bind("127.0.0.1:0").map_err(RunError::io)?;
    let mut links: Vec<Box<dyn ActorLink>> = Vec::with_capacity(n);
    for s in settings {
        let worker = format!("actor{}", s.index);
        match spawn_remote(&listener, s, &launch) {
            Ok(l) => links.push(Box::new(l)),
            Err(e) => {
                for l in &mut links {
                    l.shutdown();
                }
                return Err(RunError::WorkerCrashed {
                    worker,
                    reason: e.to_string(),
                    partial: Box::default(),
                });
            }
        }
    }
    Ok(links)
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, league: &League, summary: &RunSummary) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(RunError::io)?;
    fs::write(dir.join(EFFECTIVE_CONFIG_FILE), cfg.to_text()).map_err(RunError::io)?;
    league.save(&dir.join(&cfg.run.league_file))?;
    fs::write(dir.join(SUMMARY_FILE), summary.to_string()).map_err(RunError::io)?;
    Ok(())
}

/// Outcome of a driver: summary extras plus the error that ended the run early.
pub(crate) struct DriverOutcome {
    pub elapsed: u64,
    pub units_per_second: f64,
    pub schedule: Vec<ScheduleEntry>,
    pub digest: Option<u64>,
    pub inference_batches: (u64, u64),
    pub failure: Option<RunError>,
}

/// Train according to `cfg`: spawn actors, drive the configured clock to the
/// frame budget, then flush metrics, league and summary.
pub fn run_experiment(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let mut session = Session::new(cfg.clone())?;
    let mut links = make_links(&cfg, opts, &session.main)?;
    let (units, cadence) = (1000.0, cfg.run.metrics_cadence);
    let mut metrics = MetricsCollector::new(cadence, units, worker_names(cfg.topology.actor_count));
    if opts.write_files {
        fs::create_dir_all(&cfg.run.output_dir).map_err(RunError::io)?;
        metrics = metrics
            .with_sink(&cfg.run.output_dir.join(&cfg.run.metrics_file))
            .map_err(RunError::io)?;
    }
    let outcome = match cfg.run.clock {
        Clock::Simulated => sim::drive(&mut session, &mut links, &mut metrics),
        Clock::Wall => wall::drive(&mut session, &mut links, &mut metrics),
    };
    for l in &mut links {
        l.shutdown();
    }
    let mut summary = session.summary(outcome.elapsed, outcome.units_per_second);
    summary.schedule_digest = outcome.digest.map(|d| format!("{d:016x}")).unwrap_or_default();
    let (batches, requests) = outcome.inference_batches;
    summary.inference_batches = batches;
    summary.mean_inference_batch = if batches > 0 { requests as f64 / batches as f64 } else { 0.0 };
    session.league.set_live(&session.main, session.learner.current())?;
    if opts.write_files {
        write_outputs(&cfg.run.output_dir, &cfg, &session.league, &summary)?;
    }
    let records = metrics.into_records().map_err(RunError::io)?;
    if let Some(failure) = outcome.failure {
        return Err(attach_partial(failure, summary));
    }
    let evaluation = if !session.two_player() && cfg.eval_episodes > 0 {
        evaluate_policy(
            cfg.env.id,
            &session.learner.current(),
            cfg.learn.algorithm,
            cfg.eval_episodes,
            cfg.learn.gamma,
            seed::derive(cfg.seed, 0xE7A2),
        )?
    } else {
        Vec::new()
    };
    Ok(RunReport {
        summary,
        metrics: records,
        final_params: session.learner.current(),
        lag: session.learner.lag_records(),
        league: session.league,
        episodes: session.episodes,
        schedule: outcome.schedule,
        evaluation,
    })
}

fn attach_partial(e: RunError, summary: RunSummary) -> RunError {
    match e {
        RunError::WorkerCrashed { worker, reason, .. } => RunError::WorkerCrashed {
            worker,
            reason,
            partial: Box::new(summary),
        },
        RunError::Deadlock {
            version, waiting, halted, ..
        } => RunError::Deadlock {
            version,
            waiting,
            halted,
            partial: Box::new(summary),
        },
        other => other,
    }
}
