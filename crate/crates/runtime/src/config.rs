//! Experiment configuration: a flat `key = value` document with dotted
//! section prefixes, `#` comments, and `DDRL_*` environment overrides.
//!
//! Every key has a default, so an empty document is a valid config.
//! Unknown keys (in the file or in the environment) are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use ddrl_core::coord::{TopologyConfig, TopologyKind};
use ddrl_core::env::{EnvId, EnvSpec};
use ddrl_core::league::{CooperationMode, Strategy, TrainingMode};
use ddrl_core::learn::{Algorithm, LearnConfig};
use ddrl_core::policy::Arch;
use thiserror::Error;

use crate::delay::{DelayOp, DelaySpec, DelayTable, WorkerId};

pub const ENV_PREFIX: &str = "DDRL_";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("unknown environment override `{0}`")]
    UnknownEnvVar(String),
    #[error("key `{key}`: invalid value `{value}` ({reason})")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("unknown worker `{0}`")]
    UnknownWorker(String),
    #[error("inconsistent config: {0}")]
    Inconsistent(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    Simulated,
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Sockets,
}

/// How socket actors are hosted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spawn {
    Process,
    Thread,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPairing {
    Latest,
    AllPairs,
    VsBaselines,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    /// Environment frame budget.
    pub frames: u64,
    pub clock: Clock,
    pub transport: Transport,
    pub spawn: Spawn,
    pub output_dir: PathBuf,
    pub metrics_file: String,
    pub league_file: String,
    /// Metrics period: ticks on the simulated clock, milliseconds on the wall clock.
    pub metrics_cadence: u64,
    pub deadlock_timeout_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSettings {
    pub id: EnvId,
    pub copies: usize,
    pub unroll_length: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySettings {
    pub arch: String,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeagueSettings {
    /// The pfsp exponent is copied in from `pfsp_exponent` on validation.
    pub strategy: Strategy,
    pub pfsp_exponent: f64,
    /// Learner updates between snapshots; 0 disables snapshots.
    pub snapshot_every: u64,
    pub eval_games: u32,
    pub k_factor: f64,
    pub initial_rating: f64,
    pub eval_pairing: EvalPairing,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FaultSettings {
    pub kill_actor: Option<usize>,
    /// Rollouts the actor completes before it is killed.
    pub kill_after: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run: RunSettings,
    pub env: EnvSettings,
    pub topology: TopologyConfig,
    pub replay_capacity: usize,
    pub replay_sample: usize,
    pub policy: PolicySettings,
    pub learn: LearnConfig,
    pub coop: CooperationMode,
    pub league: LeagueSettings,
    pub delays: DelayTable,
    pub faults: FaultSettings,
    pub eval_episodes: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            run: RunSettings {
                frames: 10_000,
                clock: Clock::Simulated,
                transport: Transport::InProcess,
                spawn: Spawn::Process,
                output_dir: PathBuf::from("ddrl-out"),
                metrics_file: "metrics.jsonl".into(),
                league_file: "league.json".into(),
                metrics_cadence: 1000,
                deadlock_timeout_ms: 5000,
            },
            env: EnvSettings {
                id: EnvId::ChainMdp,
                copies: 1,
                unroll_length: 10,
            },
            topology: TopologyConfig::default(),
            replay_capacity: 4096,
            replay_sample: 32,
            policy: PolicySettings {
                arch: "tabular".into(),
                hidden: 16,
            },
            learn: LearnConfig::default(),
            coop: CooperationMode::default(),
            league: LeagueSettings {
                strategy: Strategy::SelfPlay8020,
                pfsp_exponent: 2.0,
                snapshot_every: 0,
                eval_games: 20,
                k_factor: 32.0,
                initial_rating: 1000.0,
                eval_pairing: EvalPairing::Latest,
            },
            delays: DelayTable::default(),
            faults: FaultSettings::default(),
            eval_episodes: 100,
        }
    }
}

/// Keys with a fixed name, in the order the effective config is written.
pub const KEYS: &[&str] = &[
    "seed",
    "run.frames",
    "run.clock",
    "run.transport",
    "run.spawn",
    "run.output_dir",
    "run.metrics_file",
    "run.league_file",
    "run.metrics_cadence",
    "run.deadlock_timeout_ms",
    "env.id",
    "env.copies",
    "env.unroll_length",
    "topology.kind",
    "topology.actors",
    "topology.learners",
    "topology.quorum_fraction",
    "topology.drop_fraction",
    "topology.max_staleness",
    "topology.inference_batch_max",
    "topology.inference_timeout",
    "topology.batch_size",
    "topology.queue_capacity",
    "topology.replay_capacity",
    "topology.replay_sample",
    "policy.arch",
    "policy.hidden",
    "learn.algorithm",
    "learn.gamma",
    "learn.lr",
    "learn.clip_eps",
    "learn.dual_clip_c",
    "learn.rho_bar",
    "learn.c_bar",
    "learn.value_coef",
    "learn.entropy_coef",
    "learn.q_alpha",
    "learn.epsilon",
    "coop.mode",
    "coop.shared_policy",
    "coop.agent_id_feature",
    "league.strategy",
    "league.pfsp_exponent",
    "league.snapshot_every",
    "league.eval_games",
    "league.k_factor",
    "league.initial_rating",
    "league.eval_pairing",
    "faults.kill_actor",
    "faults.kill_after",
    "eval.episodes",
];

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| invalid(key, value, "not a number"))
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

impl ExperimentConfig {
    /// Parse a document, then apply environment overrides from `vars`.
    pub fn parse_with_env<I>(text: &str, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        let mut overrides: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (name, value) in overrides {
            let key = key_for_env(&name).ok_or_else(|| ConfigError::UnknownEnvVar(name.clone()))?;
            cfg.set(&key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without environment overrides.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_env(text, std::iter::empty())
    }

    /// Read a file and apply the process environment.
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_with_env(&text, std::env::vars())
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if let Some(rest) = key.strip_prefix("delay.") {
            let (worker, op) = rest.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
            let worker: WorkerId = worker.parse().map_err(|_| ConfigError::UnknownWorker(worker.into()))?;
            let op: DelayOp = op.parse().map_err(|_| ConfigError::UnknownKey(key.into()))?;
            let spec: DelaySpec = value.parse().map_err(|e: String| invalid(key, value, e))?;
            self.delays.set(worker, op, spec);
            return Ok(());
        }
        let t = &mut self.topology;
        let l = &mut self.learn;
        match key {
            "seed" => self.seed = num(key, value)?,
            "run.frames" => self.run.frames = num(key, value)?,
            "run.clock" => {
                self.run.clock = match value {
                    "simulated" => Clock::Simulated,
                    "wall" => Clock::Wall,
                    _ => return Err(invalid(key, value, "expected simulated or wall")),
                }
            }
            "run.transport" => {
                self.run.transport = match value {
                    "in_process" => Transport::InProcess,
                    "sockets" => Transport::Sockets,
                    _ => return Err(invalid(key, value, "expected in_process or sockets")),
                }
            }
            "run.spawn" => {
                self.run.spawn = match value {
                    "process" => Spawn::Process,
                    "thread" => Spawn::Thread,
                    _ => return Err(invalid(key, value, "expected process or thread")),
                }
            }
            "run.output_dir" => self.run.output_dir = PathBuf::from(value),
            "run.metrics_file" => self.run.metrics_file = value.into(),
            "run.league_file" => self.run.league_file = value.into(),
            "run.metrics_cadence" => self.run.metrics_cadence = num(key, value)?,
            "run.deadlock_timeout_ms" => self.run.deadlock_timeout_ms = num(key, value)?,
            "env.id" => self.env.id = value.parse().map_err(|_| invalid(key, value, "unknown environment"))?,
            "env.copies" => self.env.copies = num(key, value)?,
            "env.unroll_length" => self.env.unroll_length = num(key, value)?,
            "topology.kind" => t.kind = value.parse().map_err(|_| invalid(key, value, "unknown topology"))?,
            "topology.actors" => t.actor_count = num(key, value)?,
            "topology.learners" => t.learner_count = num(key, value)?,
            "topology.quorum_fraction" => t.quorum_fraction = num(key, value)?,
            "topology.drop_fraction" => t.drop_fraction = num(key, value)?,
            "topology.max_staleness" => {
                t.max_staleness = if value == "unlimited" { None } else { Some(num(key, value)?) }
            }
            "topology.inference_batch_max" => t.inference_batch_max = num(key, value)?,
            "topology.inference_timeout" => t.inference_timeout = num(key, value)?,
            "topology.batch_size" => t.batch_size = num(key, value)?,
            "topology.queue_capacity" => t.queue_capacity = num(key, value)?,
            "topology.replay_capacity" => self.replay_capacity = num(key, value)?,
            "topology.replay_sample" => self.replay_sample = num(key, value)?,
            "policy.arch" => self.policy.arch = value.into(),
            "policy.hidden" => self.policy.hidden = num(key, value)?,
            "learn.algorithm" => l.algorithm = value.parse().map_err(|_| invalid(key, value, "expected a2c, ppo or q"))?,
            "learn.gamma" => l.gamma = num(key, value)?,
            "learn.lr" => l.learning_rate = num(key, value)?,
            "learn.clip_eps" => l.clip_eps = num(key, value)?,
            "learn.dual_clip_c" => l.dual_clip_c = num(key, value)?,
            "learn.rho_bar" => l.rho_bar = num(key, value)?,
            "learn.c_bar" => l.c_bar = num(key, value)?,
            "learn.value_coef" => l.value_coef = num(key, value)?,
            "learn.entropy_coef" => l.entropy_coef = num(key, value)?,
            "learn.q_alpha" => l.q_alpha = num(key, value)?,
            "learn.epsilon" => l.epsilon = num(key, value)?,
            "coop.mode" => {
                self.coop.mode = match value {
                    "independent" => TrainingMode::Independent,
                    "joint" => TrainingMode::Joint,
                    _ => return Err(invalid(key, value, "expected independent or joint")),
                }
            }
            "coop.shared_policy" => self.coop.shared_policy = flag(key, value)?,
            "coop.agent_id_feature" => self.coop.agent_id_feature = flag(key, value)?,
            "league.strategy" => {
                self.league.strategy = value.parse().map_err(|_| invalid(key, value, "unknown strategy"))?
            }
            "league.pfsp_exponent" => self.league.pfsp_exponent = num(key, value)?,
            "league.snapshot_every" => self.league.snapshot_every = num(key, value)?,
            "league.eval_games" => self.league.eval_games = num(key, value)?,
            "league.k_factor" => self.league.k_factor = num(key, value)?,
            "league.initial_rating" => self.league.initial_rating = num(key, value)?,
            "league.eval_pairing" => {
                self.league.eval_pairing = match value {
                    "latest" => EvalPairing::Latest,
                    "all_pairs" => EvalPairing::AllPairs,
                    "vs_baselines" => EvalPairing::VsBaselines,
                    _ => return Err(invalid(key, value, "expected latest, all_pairs or vs_baselines")),
                }
            }
            "faults.kill_actor" => {
                self.faults.kill_actor = if value == "none" { None } else { Some(num(key, value)?) }
            }
            "faults.kill_after" => self.faults.kill_after = num(key, value)?,
            "eval.episodes" => self.eval_episodes = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Cross-field checks.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        if let Strategy::Pfsp { exponent } = &mut self.league.strategy {
            *exponent = self.league.pfsp_exponent;
        }
        if !(self.league.pfsp_exponent >= 0.0) {
            return Err(invalid("league.pfsp_exponent", &self.league.pfsp_exponent.to_string(), "must be >= 0"));
        }
        let bad = |m: String| Err(ConfigError::Inconsistent(m));
        self.topology.validate().map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        if self.env.copies == 0 || self.env.unroll_length == 0 {
            return bad("env.copies and env.unroll_length must be positive".into());
        }
        if self.run.metrics_cadence == 0 {
            return bad("run.metrics_cadence must be positive".into());
        }
        if !self.coop.shared_policy {
            return bad("coop.shared_policy = false is not supported; one parameter set per player".into());
        }
        let spec = self.env_spec();
        let arch = self.arch()?;
        let kind = self.topology.kind;
        match (kind, self.learn.algorithm) {
            (TopologyKind::ReplayQlearning, Algorithm::Q) => {
                if !matches!(arch, Arch::Tabular { .. }) {
                    return bad("replay_qlearning needs policy.arch = tabular".into());
                }
                if self.replay_capacity == 0 || self.replay_sample == 0 {
                    return bad("replay capacity and sample size must be positive".into());
                }
            }
            (TopologyKind::ReplayQlearning, a) => return bad(format!("replay_qlearning needs learn.algorithm = q, got {a}")),
            (k, Algorithm::Q) => return bad(format!("{k} needs an actor-critic algorithm (a2c or ppo)")),
            _ => {}
        }
        if !(self.learn.gamma > 0.0 && self.learn.gamma <= 1.0) {
            return bad("learn.gamma must lie in (0, 1]".into());
        }
        if !(self.learn.learning_rate > 0.0 && self.learn.learning_rate.is_finite()) {
            return bad("learn.lr must be positive".into());
        }
        if self.learn.algorithm == Algorithm::Ppo && self.learn.dual_clip_c <= 1.0 {
            return bad("learn.dual_clip_c must exceed 1".into());
        }
        if !(0.0..=1.0).contains(&self.learn.epsilon) {
            return bad("learn.epsilon must lie in [0, 1]".into());
        }
        if spec.players > 2 {
            return bad(format!("{} seats more than two players", spec.env_id));
        }
        if spec.agents_per_player > 1 && !self.coop.agent_id_feature {
            return bad("shared multi-agent policies need coop.agent_id_feature".into());
        }
        if !kind.exchanges_gradients() && self.topology.queue_capacity < self.topology.batch_size {
            return bad("topology.queue_capacity must hold at least one batch".into());
        }
        if let Some(k) = self.faults.kill_actor {
            if k >= self.topology.actor_count {
                return Err(ConfigError::UnknownWorker(format!("actor{k}")));
            }
        }
        self.delays
            .check_workers(self.topology.actor_count)
            .map_err(|w| ConfigError::UnknownWorker(w.to_string()))?;
        Ok(())
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::of(self.env.id)
    }

    pub fn arch(&self) -> Result<Arch, ConfigError> {
        Arch::for_spec(&self.policy.arch, &self.env_spec(), self.policy.hidden)
            .map_err(|e| invalid("policy.arch", &self.policy.arch, e.to_string()))
    }

    /// Textual value of a fixed key.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.topology;
        let l = &self.learn;
        let b = |v: bool| v.to_string();
        Some(match key {
            "seed" => self.seed.to_string(),
            "run.frames" => self.run.frames.to_string(),
            "run.clock" => match self.run.clock {
                Clock::Simulated => "simulated",
                Clock::Wall => "wall",
            }
            .into(),
            "run.transport" => match self.run.transport {
                Transport::InProcess => "in_process",
                Transport::Sockets => "sockets",
            }
            .into(),
            "run.spawn" => match self.run.spawn {
                Spawn::Process => "process",
                Spawn::Thread => "thread",
            }
            .into(),
            "run.output_dir" => self.run.output_dir.display().to_string(),
            "run.metrics_file" => self.run.metrics_file.clone(),
            "run.league_file" => self.run.league_file.clone(),
            "run.metrics_cadence" => self.run.metrics_cadence.to_string(),
            "run.deadlock_timeout_ms" => self.run.deadlock_timeout_ms.to_string(),
            "env.id" => self.env.id.to_string(),
            "env.copies" => self.env.copies.to_string(),
            "env.unroll_length" => self.env.unroll_length.to_string(),
            "topology.kind" => t.kind.to_string(),
            "topology.actors" => t.actor_count.to_string(),
            "topology.learners" => t.learner_count.to_string(),
            "topology.quorum_fraction" => t.quorum_fraction.to_string(),
            "topology.drop_fraction" => t.drop_fraction.to_string(),
            "topology.max_staleness" => t.max_staleness.map_or("unlimited".into(), |m| m.to_string()),
            "topology.inference_batch_max" => t.inference_batch_max.to_string(),
            "topology.inference_timeout" => t.inference_timeout.to_string(),
            "topology.batch_size" => t.batch_size.to_string(),
            "topology.queue_capacity" => t.queue_capacity.to_string(),
            "topology.replay_capacity" => self.replay_capacity.to_string(),
            "topology.replay_sample" => self.replay_sample.to_string(),
            "policy.arch" => self.policy.arch.clone(),
            "policy.hidden" => self.policy.hidden.to_string(),
            "learn.algorithm" => l.algorithm.to_string(),
            "learn.gamma" => l.gamma.to_string(),
            "learn.lr" => l.learning_rate.to_string(),
            "learn.clip_eps" => l.clip_eps.to_string(),
            "learn.dual_clip_c" => l.dual_clip_c.to_string(),
            "learn.rho_bar" => l.rho_bar.to_string(),
            "learn.c_bar" => l.c_bar.to_string(),
            "learn.value_coef" => l.value_coef.to_string(),
            "learn.entropy_coef" => l.entropy_coef.to_string(),
            "learn.q_alpha" => l.q_alpha.to_string(),
            "learn.epsilon" => l.epsilon.to_string(),
            "coop.mode" => match self.coop.mode {
                TrainingMode::Independent => "independent",
                TrainingMode::Joint => "joint",
            }
            .into(),
            "coop.shared_policy" => b(self.coop.shared_policy),
            "coop.agent_id_feature" => b(self.coop.agent_id_feature),
            "league.strategy" => self.league.strategy.name().into(),
            "league.pfsp_exponent" => self.league.pfsp_exponent.to_string(),
            "league.snapshot_every" => self.league.snapshot_every.to_string(),
            "league.eval_games" => self.league.eval_games.to_string(),
            "league.k_factor" => self.league.k_factor.to_string(),
            "league.initial_rating" => self.league.initial_rating.to_string(),
            "league.eval_pairing" => match self.league.eval_pairing {
                EvalPairing::Latest => "latest",
                EvalPairing::AllPairs => "all_pairs",
                EvalPairing::VsBaselines => "vs_baselines",
            }
            .into(),
            "faults.kill_actor" => self.faults.kill_actor.map_or("none".into(), |k| k.to_string()),
            "faults.kill_after" => self.faults.kill_after.to_string(),
            "eval.episodes" => self.eval_episodes.to_string(),
            _ => return None,
        })
    }

    /// Every effective setting as a config document that parses back to
    /// an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        for (worker, op, spec) in self.delays.entries() {
            let _ = writeln!(out, "delay.{worker}.{op} = {spec}");
        }
        out
    }

    /// All fixed keys with their current values.
    pub fn as_map(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k).expect("listed key"))).collect()
    }
}

/// `DDRL_RUN_FRAMES` -> `run.frames`; `DDRL_DELAY_ACTOR0_ENV_STEP` ->
/// `delay.actor0.env_step`. Returns `None` for names matching no key.
pub fn key_for_env(name: &str) -> Option<String> {
    let rest = name.strip_prefix(ENV_PREFIX)?;
    if let Some(d) = rest.strip_prefix("DELAY_") {
        let (worker, op) = d.split_once('_')?;
        let worker = worker.to_ascii_lowercase();
        let op = op.to_ascii_lowercase();
        worker.parse::<WorkerId>().ok()?;
        op.parse::<DelayOp>().ok()?;
        return Some(format!("delay.{worker}.{op}"));
    }
    KEYS.iter().find(|k| env_name(k) == name).map(|k| k.to_string())
}

/// Environment variable name of a fixed key.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::parse("# only a comment\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_and_comments() {
        let c = ExperimentConfig::parse(
            "seed = 7  # trailing\nenv.id = matrix_rps\ntopology.kind = sync_quorum\ntopology.quorum_fraction = 0.75\n\
             league.strategy = pfsp\nleague.pfsp_exponent = 1.5\ndelay.actor0.env_step = const:100\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.env.id, EnvId::MatrixRps);
        assert_eq!(c.topology.kind, TopologyKind::SyncQuorum);
        assert_eq!(c.league.strategy, Strategy::Pfsp { exponent: 1.5 });
        assert_eq!(c.delays.get(WorkerId::Actor(0), DelayOp::EnvStep), DelaySpec::Const(100));
    }

    #[test]
    fn exponent_before_strategy_is_kept() {
        let c = ExperimentConfig::parse("league.pfsp_exponent = 3\nleague.strategy = pfsp\nenv.id = matrix_rps").unwrap();
        assert_eq!(c.league.strategy, Strategy::Pfsp { exponent: 3.0 });
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert_eq!(
            ExperimentConfig::parse("run.speed = 3"),
            Err(ConfigError::UnknownKey("run.speed".into()))
        );
        assert_eq!(ExperimentConfig::parse("seed 3"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(
            ExperimentConfig::parse("run.frames = lots"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("delay.actor9.env_step = const:1"),
            Err(ConfigError::UnknownWorker(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("coop.shared_policy = false"),
            Err(ConfigError::Inconsistent(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("learn.algorithm = q"),
            Err(ConfigError::Inconsistent(_))
        ));
    }

    #[test]
    fn env_overrides_apply_and_unknown_rejected() {
        let vars = vec![
            ("DDRL_RUN_FRAMES".to_string(), "123".to_string()),
            ("DDRL_DELAY_ACTORS_SEND".to_string(), "uniform:1:3".to_string()),
            ("HOME".to_string(), "/".to_string()),
        ];
        let c = ExperimentConfig::parse_with_env("run.frames = 5", vars).unwrap();
        assert_eq!(c.run.frames, 123);
        assert_eq!(c.delays.get(WorkerId::Actor(2), DelayOp::Send), DelaySpec::Uniform(1, 3));
        let bad = vec![("DDRL_RUN_SPEED".to_string(), "1".to_string())];
        assert_eq!(
            ExperimentConfig::parse_with_env("", bad),
            Err(ConfigError::UnknownEnvVar("DDRL_RUN_SPEED".into()))
        );
    }

    #[test]
    fn every_key_has_an_env_name() {
        for k in KEYS {
            assert_eq!(key_for_env(&env_name(k)).as_deref(), Some(*k));
        }
    }

    #[test]
    fn effective_text_round_trips() {
        let mut c = ExperimentConfig::default();
        c.env.id = EnvId::GridCapture;
        c.policy.arch = "mlp1".into();
        c.topology.max_staleness = Some(2);
        c.faults.kill_actor = Some(1);
        c.delays.set(WorkerId::Learner, DelayOp::Learn, DelaySpec::Halt);
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }
}
