//! Actor-side rollout logic, independent of transport and clock.
//!
//! The learning player always sits in seat 0 and only its agents produce
//! training data. In two-player games seat 1 is played by a frozen
//! opponent chosen by the learner side for each rollout.
//!
//! Every sampled action draws from its own stream seeded by
//! `(actor seed, vector step, env copy, agent)`, so the same parameters
//! give the same actions whether inference runs locally or on the server.

use std::sync::Arc;

use ddrl_core::buffer::{BufferError, EpisodeBuffer};
use ddrl_core::coord::{InferReply, InferRequest, TopologyKind};
use ddrl_core::env::{EnvError, EnvId, EnvSpec, JointObservation, VecEnv};
use ddrl_core::league::TrainingMode;
use ddrl_core::learn::{epsilon_greedy, train_gradient, Algorithm, LearnConfig, LearnError, QTable, Trajectory, Transition};
use ddrl_core::policy::{agent_input, infer, Arch, GradientUpdate, PolicyError, PolicyParameters};
use ddrl_core::seed;
use ddrl_core::PlayerId;
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActorError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error("expected {expected} inference replies, got {got}")]
    ReplyCount { expected: usize, got: usize },
    #[error("two-player environment without an opponent")]
    MissingOpponent,
}

/// Finished episode as seen by the learning player.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStat {
    /// Undiscounted team return.
    pub ret: f64,
    pub discounted: f64,
    pub length: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Trajectories(Vec<Trajectory>),
    Gradient(GradientUpdate),
}

/// What one rollout hands to the learner side.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutReport {
    /// Environment frames stepped (vector steps times copies).
    pub frames: u64,
    /// Learning-seat transitions behind the payload.
    pub samples: u64,
    pub payload: Payload,
    pub episodes: Vec<EpisodeStat>,
}

#[derive(Clone, Debug)]
pub struct RolloutJob {
    pub behavior: Arc<PolicyParameters>,
    pub opponent: Option<Arc<PolicyParameters>>,
}

/// Output of one central-inference step.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralOutput {
    pub frames: u64,
    pub trajectories: Vec<Trajectory>,
    pub episodes: Vec<EpisodeStat>,
    /// Requests for the next step, one per (copy, agent).
    pub requests: Vec<InferRequest>,
}

/// Per-actor settings derived from the experiment config.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorSettings {
    pub index: usize,
    pub seed: u64,
    pub env_id: EnvId,
    pub copies: usize,
    pub unroll_length: usize,
    pub kind: TopologyKind,
    pub learn: LearnConfig,
    pub arch: Arch,
    pub player: PlayerId,
    pub agent_id_feature: bool,
    /// Every agent is trained on the team reward instead of its own.
    pub team_reward: bool,
}

impl ActorSettings {
    pub fn from_config(cfg: &ExperimentConfig, index: usize, player: PlayerId) -> Self {
        ActorSettings {
            index,
            seed: actor_seed(cfg.seed, index),
            env_id: cfg.env.id,
            copies: cfg.env.copies,
            unroll_length: cfg.env.unroll_length,
            kind: cfg.topology.kind,
            learn: cfg.learn.clone(),
            arch: cfg.arch().expect("validated config"),
            player,
            agent_id_feature: cfg.coop.agent_id_feature,
            team_reward: cfg.coop.mode == TrainingMode::Joint,
        }
    }

    pub fn producer_id(&self) -> String {
        format!("actor-{:02}", self.index)
    }
}

pub fn actor_seed(base: u64, index: usize) -> u64 {
    seed::derive(seed::derive(base, 0xAC70), index as u64)
}

fn action_seed(actor: u64, step: u64, copy: usize, agent: usize) -> u64 {
    seed::derive(seed::derive(seed::derive(actor, step), copy as u64), agent as u64)
}

/// Opponent actions use a separate stream family.
fn opponent_seed(actor: u64, step: u64, copy: usize, agent: usize) -> u64 {
    action_seed(seed::derive(actor, 0x0990), step, copy, agent)
}

enum Behavior<'a> {
    ActorCritic(&'a PolicyParameters),
    Greedy { table: QTable, version: u64, epsilon: f64 },
}

struct Choice {
    action: usize,
    log_prob: f64,
    value: f64,
    version: u64,
}

impl Behavior<'_> {
    fn choose(&self, x: &[f64], mask: &[bool], stream: u64) -> Result<Choice, ActorError> {
        let mut rng = seed::rng(stream);
        match self {
            Behavior::ActorCritic(p) => {
                let out = infer(p, x, mask, &mut rng)?;
                Ok(Choice {
                    action: out.action,
                    log_prob: out.log_prob,
                    value: out.value,
                    version: p.version,
                })
            }
            Behavior::Greedy { table, version, epsilon } => {
                let s = table.state_of(x)?;
                let (action, log_prob) = epsilon_greedy(table, s, mask, *epsilon, &mut rng)?;
                Ok(Choice {
                    action,
                    log_prob,
                    value: table.max(s),
                    version: *version,
                })
            }
        }
    }
}

type SegmentKey = (usize, usize, u64);

/// One actor: a vectorized environment plus per-agent segment staging.
pub struct ActorCore {
    settings: ActorSettings,
    env: VecEnv,
    spec: EnvSpec,
    buffer: EpisodeBuffer<SegmentKey>,
    /// Current segment id and length per (copy, agent).
    segment: Vec<Vec<(u64, usize)>>,
    /// Cut segments waiting for the value of the state after them.
    awaiting_bootstrap: Vec<(usize, usize)>,
    ep_return: Vec<f64>,
    ep_discounted: Vec<f64>,
    ep_discount: Vec<f64>,
    ep_length: Vec<u32>,
    step: u64,
    rollouts: u64,
    opponent: Option<Arc<PolicyParameters>>,
}

impl ActorCore {
    pub fn new(settings: ActorSettings) -> Self {
        let env = VecEnv::new(settings.env_id, settings.copies, seed::derive(settings.seed, 0xE5));
        let spec = env.spec().clone();
        let copies = settings.copies;
        let agents = spec.agents_per_player;
        ActorCore {
            env,
            spec,
            buffer: EpisodeBuffer::new(),
            segment: vec![vec![(0, 0); agents]; copies],
            awaiting_bootstrap: Vec::new(),
            ep_return: vec![0.0; copies],
            ep_discounted: vec![0.0; copies],
            ep_discount: vec![1.0; copies],
            ep_length: vec![0; copies],
            step: 0,
            rollouts: 0,
            opponent: None,
            settings,
        }
    }

    pub fn settings(&self) -> &ActorSettings {
        &self.settings
    }

    pub fn rollouts(&self) -> u64 {
        self.rollouts
    }

    /// Frames produced by one local-inference rollout.
    pub fn frames_per_rollout(&self) -> u64 {
        (self.settings.unroll_length * self.settings.copies) as u64
    }

    pub fn set_opponent(&mut self, opponent: Option<Arc<PolicyParameters>>) {
        self.opponent = opponent;
    }

    fn input(&self, obs: &JointObservation, agent: usize) -> Vec<f64> {
        agent_input(
            &obs.per_agent_obs[agent],
            agent,
            self.spec.agents_per_player,
            self.settings.agent_id_feature,
        )
    }

    fn key(&self, copy: usize, agent: usize) -> SegmentKey {
        (copy, agent, self.segment[copy][agent].0)
    }

    fn close_segment(&mut self, copy: usize, agent: usize, bootstrap: f64) -> Result<(), ActorError> {
        let key = self.key(copy, agent);
        if self.segment[copy][agent].1 > 0 {
            self.buffer.finish(&key, bootstrap)?;
        }
        let seg = &mut self.segment[copy][agent];
        *seg = (seg.0 + 1, 0);
        Ok(())
    }

    /// Actions for the opponent seat of every copy.
    fn opponent_actions(&self, observations: &[Vec<JointObservation>]) -> Result<Vec<Vec<usize>>, ActorError> {
        if self.spec.players < 2 {
            return Ok(Vec::new());
        }
        let opp = self.opponent.as_ref().ok_or(ActorError::MissingOpponent)?;
        let mut out = Vec::with_capacity(observations.len());
        for (copy, obs) in observations.iter().enumerate() {
            let seat = &obs[1];
            let mut acts = Vec::with_capacity(self.spec.agents_per_player);
            for agent in 0..self.spec.agents_per_player {
                let x = self.input(seat, agent);
                let mut rng = seed::rng(opponent_seed(self.settings.seed, self.step, copy, agent));
                acts.push(infer(opp, &x, &seat.action_mask[agent], &mut rng)?.action);
            }
            out.push(acts);
        }
        Ok(out)
    }

    /// Step every copy with the learning seat's choices, record the
    /// learning seat's transitions and close finished episodes.
    fn advance(&mut self, choices: &[Choice], episodes: &mut Vec<EpisodeStat>) -> Result<(), ActorError> {
        let agents = self.spec.agents_per_player;
        let observations = self.env.observations().to_vec();
        let opp = self.opponent_actions(&observations)?;
        let joint: Vec<Vec<Vec<usize>>> = (0..self.settings.copies)
            .map(|copy| {
                let mut seats = vec![(0..agents).map(|a| choices[copy * agents + a].action).collect::<Vec<_>>()];
                if let Some(o) = opp.get(copy) {
                    seats.push(o.clone());
                }
                seats
            })
            .collect();
        let results = self.env.vector_step(&joint)?;
        let gamma = self.settings.learn.gamma;
        for (copy, res) in results.iter().enumerate() {
            let before = &observations[copy][0];
            let after = match &res.terminal_observations {
                Some(t) => &t[0],
                None => &res.result.observations[0],
            };
            let team: f64 = res.result.rewards[0].iter().sum();
            self.ep_return[copy] += team;
            self.ep_discounted[copy] += self.ep_discount[copy] * team;
            self.ep_discount[copy] *= gamma;
            self.ep_length[copy] += 1;
            for agent in 0..agents {
                let c = &choices[copy * agents + agent];
                let t = Transition {
                    obs: self.input(before, agent),
                    mask: before.action_mask[agent].clone(),
                    action: c.action,
                    reward: if self.settings.team_reward {
                        team
                    } else {
                        res.result.rewards[0][agent]
                    },
                    next_obs: self.input(after, agent),
                    done: res.result.done,
                    behavior_log_prob: c.log_prob.min(0.0),
                    value_estimate: c.value,
                    param_version: c.version,
                    agent_id: agent,
                    player_id: self.settings.player.clone(),
                    episode_id: ((copy as u64) << 40) | res.episode,
                    episode_step: before.episode_step,
                };
                let key = self.key(copy, agent);
                self.buffer.append_step(key, t);
                self.segment[copy][agent].1 += 1;
            }
            if res.result.done {
                for agent in 0..agents {
                    self.close_segment(copy, agent, 0.0)?;
                }
                episodes.push(EpisodeStat {
                    ret: self.ep_return[copy],
                    discounted: self.ep_discounted[copy],
                    length: self.ep_length[copy],
                });
                self.ep_return[copy] = 0.0;
                self.ep_discounted[copy] = 0.0;
                self.ep_discount[copy] = 1.0;
                self.ep_length[copy] = 0;
            }
        }
        self.step += 1;
        Ok(())
    }

    fn choices(&self, behavior: &Behavior) -> Result<Vec<Choice>, ActorError> {
        let agents = self.spec.agents_per_player;
        let mut out = Vec::with_capacity(self.settings.copies * agents);
        for (copy, obs) in self.env.observations().iter().enumerate() {
            for agent in 0..agents {
                let x = self.input(&obs[0], agent);
                let stream = action_seed(self.settings.seed, self.step, copy, agent);
                out.push(behavior.choose(&x, &obs[0].action_mask[agent], stream)?);
            }
        }
        Ok(out)
    }

    /// One local-inference rollout of `unroll_length` vector steps.
    pub fn rollout(&mut self, job: &RolloutJob) -> Result<RolloutReport, ActorError> {
        self.opponent = job.opponent.clone();
        let behavior = match self.settings.learn.algorithm {
            Algorithm::Q => Behavior::Greedy {
                table: QTable::from_params(&job.behavior)?,
                version: job.behavior.version,
                epsilon: self.settings.learn.epsilon,
            },
            _ => Behavior::ActorCritic(&job.behavior),
        };
        let mut episodes = Vec::new();
        for _ in 0..self.settings.unroll_length {
            let choices = self.choices(&behavior)?;
            self.advance(&choices, &mut episodes)?;
        }
        // Cut open segments, bootstrapping from the behavior value.
        let agents = self.spec.agents_per_player;
        for copy in 0..self.settings.copies {
            for agent in 0..agents {
                if self.segment[copy][agent].1 == 0 {
                    continue;
                }
                let obs = &self.env.observations()[copy][0];
                let x = self.input(obs, agent);
                let stream = action_seed(self.settings.seed, self.step, copy, agent);
                let v = behavior.choose(&x, &obs.action_mask[agent], stream).map_or(0.0, |c| c.value);
                self.close_segment(copy, agent, v)?;
            }
        }
        let trajectories = self.buffer.drain_finished();
        let samples: u64 = trajectories.iter().map(|t| t.len() as u64).sum();
        self.rollouts += 1;
        let payload = if self.settings.kind.exchanges_gradients() {
            let mut update = train_gradient(&job.behavior, &trajectories, &self.settings.learn)?;
            update.producer_id = self.settings.producer_id();
            Payload::Gradient(update)
        } else {
            Payload::Trajectories(trajectories)
        };
        Ok(RolloutReport {
            frames: self.frames_per_rollout(),
            samples,
            payload,
            episodes,
        })
    }

    fn requests(&self) -> Vec<InferRequest> {
        let agents = self.spec.agents_per_player;
        let mut out = Vec::with_capacity(self.settings.copies * agents);
        for (copy, obs) in self.env.observations().iter().enumerate() {
            for agent in 0..agents {
                out.push(InferRequest {
                    player_id: self.settings.player.clone(),
                    observation: self.input(&obs[0], agent),
                    mask: obs[0].action_mask[agent].clone(),
                    rng_seed: action_seed(self.settings.seed, self.step, copy, agent),
                });
            }
        }
        out
    }

    /// Requests for the current observations, to start central inference.
    pub fn central_begin(&self) -> Vec<InferRequest> {
        self.requests()
    }

    /// Apply server replies (one per request, in order), step, and return
    /// the trajectories finished by this step plus the next requests.
    /// Open segments are cut every `unroll_length` steps and take their
    /// bootstrap value from the next reply for the same agent.
    pub fn central_step(&mut self, replies: &[InferReply]) -> Result<CentralOutput, ActorError> {
        let agents = self.spec.agents_per_player;
        let expected = self.settings.copies * agents;
        if replies.len() != expected {
            return Err(ActorError::ReplyCount {
                expected,
                got: replies.len(),
            });
        }
        for (copy, agent) in std::mem::take(&mut self.awaiting_bootstrap) {
            self.close_segment(copy, agent, replies[copy * agents + agent].value)?;
        }
        let choices: Vec<Choice> = replies
            .iter()
            .map(|r| Choice {
                action: r.action,
                log_prob: r.log_prob,
                value: r.value,
                version: r.version,
            })
            .collect();
        let mut episodes = Vec::new();
        self.advance(&choices, &mut episodes)?;
        // Same cut points as local rollouts: every `unroll_length` steps.
        if self.step.is_multiple_of(self.settings.unroll_length as u64) {
            self.rollouts += 1;
            for copy in 0..self.settings.copies {
                for agent in 0..agents {
                    if self.segment[copy][agent].1 > 0 {
                        self.awaiting_bootstrap.push((copy, agent));
                    }
                }
            }
        }
        Ok(CentralOutput {
            frames: self.settings.copies as u64,
            trajectories: self.buffer.drain_finished(),
            episodes,
            requests: self.requests(),
        })
    }
}

/// Run `episodes` evaluation episodes of `params` on a fresh single-copy
/// environment (single-player environments only). Actor-critic policies
/// sample their actions; Q tables act greedily.
pub fn evaluate_policy(
    env_id: EnvId,
    params: &PolicyParameters,
    algorithm: Algorithm,
    episodes: u32,
    gamma: f64,
    seed_base: u64,
) -> Result<Vec<EpisodeStat>, ActorError> {
    let settings = ActorSettings {
        index: 0,
        seed: seed::derive(seed_base, 0xE7A1),
        env_id,
        copies: 1,
        unroll_length: 1,
        kind: TopologyKind::AsyncTrajectory,
        learn: LearnConfig {
            gamma,
            ..LearnConfig::default()
        },
        arch: params.arch,
        player: params.player_id.clone(),
        agent_id_feature: true,
        team_reward: false,
    };
    let mut core = ActorCore::new(settings);
    if core.spec.players > 1 {
        return Err(ActorError::MissingOpponent);
    }
    let mut out = Vec::new();
    let behavior = match algorithm {
        Algorithm::Q => Behavior::Greedy {
            table: QTable::from_params(params)?,
            version: params.version,
            epsilon: 0.0,
        },
        _ => Behavior::ActorCritic(params),
    };
    while out.len() < episodes as usize {
        let choices = core.choices(&behavior)?;
        core.advance(&choices, &mut out)?;
        core.buffer.drain_finished();
    }
    Ok(out)
}
