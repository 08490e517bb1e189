//! Players manager: registry of players and their frozen generations,
//! confrontation bookkeeping, Elo ratings, opponent sampling and the
//! agents-cooperation batching switch.

mod coop;
mod elo;
mod eval;
mod persist;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvId};
use crate::policy::{PolicyError, PolicyParameters};
use crate::PlayerId;

pub use coop::{build_training_batches, CooperationMode, JointRow, TrainingBatch, TrainingMode};
pub use elo::{elo_update, expected_score, run_elo};
pub use eval::{play_match, policy_action, scripted_params, Pairing};
pub use persist::{LeagueFile, SCHEMA_VERSION};

pub const DEFAULT_K_FACTOR: f64 = 32.0;
pub const DEFAULT_INITIAL_RATING: f64 = 1000.0;
/// Probability of facing the live policy under `self_80_20`.
pub const SELF_PLAY_LIVE_SHARE: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeagueError {
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("player {0} already registered")]
    DuplicatePlayer(PlayerId),
    #[error("unknown generation {0}")]
    UnknownGeneration(GenerationRef),
    #[error("player {0} has no live parameters")]
    NoLiveParams(PlayerId),
    #[error("invalid match: {0}")]
    InvalidMatch(String),
    #[error("no matches recorded")]
    NoMatches,
    #[error("no opponent available for {player} under {strategy}")]
    EmptyPool { player: PlayerId, strategy: String },
    #[error("unknown sampling strategy `{0}`")]
    UnknownStrategy(String),
    #[error("{env} cannot seat these players")]
    EnvPlayerMismatch { env: EnvId },
    #[error("trajectory agent id {agent} outside 0..{agents}")]
    MissingAgentTag { agent: usize, agents: usize },
    #[error("generation {generation} checksum mismatch")]
    ChecksumMismatch { generation: GenerationRef },
    #[error("unsupported league schema version {0}")]
    SchemaVersion(u32),
    #[error("league file i/o: {0}")]
    Io(String),
    #[error("league file format: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Main,
    MainExploiter,
    LeagueExploiter,
    Peer,
    /// Fixed scripted policy used as an evaluation anchor.
    Baseline,
}

/// One frozen generation of one player.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenerationRef {
    pub player_id: PlayerId,
    pub generation: u32,
}

impl GenerationRef {
    pub fn new(player_id: impl Into<PlayerId>, generation: u32) -> Self {
        GenerationRef {
            player_id: player_id.into(),
            generation,
        }
    }
}

impl From<String> for PlayerId {
    fn from(s: String) -> Self {
        PlayerId(s)
    }
}

impl fmt::Display for GenerationRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.player_id, self.generation)
    }
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub index: u32,
    pub params: Arc<PolicyParameters>,
    /// Checksum taken when the generation was frozen.
    pub checksum: String,
}

#[derive(Clone, Debug)]
pub struct PlayerRecord {
    pub player_id: PlayerId,
    pub role: Role,
    pub generations: Vec<Generation>,
    pub live: Option<Arc<PolicyParameters>>,
}

impl PlayerRecord {
    pub fn latest(&self) -> Option<&Generation> {
        self.generations.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AWin,
    BWin,
    Draw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Assigned when recorded; ratings replay matches in id order.
    #[serde(default)]
    pub id: u64,
    pub side_a: GenerationRef,
    pub side_b: GenerationRef,
    pub outcome: Outcome,
    pub game_count: u32,
}

impl MatchResult {
    pub fn new(side_a: GenerationRef, side_b: GenerationRef, outcome: Outcome, game_count: u32) -> Self {
        MatchResult {
            id: 0,
            side_a,
            side_b,
            outcome,
            game_count,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub wins: u64,
    pub losses: u64,
    pub draws: u64,
}

impl Tally {
    pub fn games(&self) -> u64 {
        self.wins + self.losses + self.draws
    }

    /// Score rate with draws counted as half a win.
    pub fn win_rate(&self) -> Option<f64> {
        let g = self.games();
        (g > 0).then(|| (self.wins as f64 + 0.5 * self.draws as f64) / g as f64)
    }

    fn add(&mut self, other: Tally) {
        self.wins += other.wins;
        self.losses += other.losses;
        self.draws += other.draws;
    }
}

/// Opponent chosen for one training rollout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opponent {
    pub player_id: PlayerId,
    /// `None` is the player's live (training) policy.
    pub generation: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    NaiveSelf,
    SelfPlay8020,
    Pfsp { exponent: f64 },
    UniformPast,
    RoleBased,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::NaiveSelf => "naive_self",
            Strategy::SelfPlay8020 => "self_80_20",
            Strategy::Pfsp { .. } => "pfsp",
            Strategy::UniformPast => "uniform_past",
            Strategy::RoleBased => "role_based",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = LeagueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive_self" => Ok(Strategy::NaiveSelf),
            "self_80_20" => Ok(Strategy::SelfPlay8020),
            "pfsp" => Ok(Strategy::Pfsp { exponent: 2.0 }),
            "uniform_past" => Ok(Strategy::UniformPast),
            "role_based" => Ok(Strategy::RoleBased),
            other => Err(LeagueError::UnknownStrategy(other.to_owned())),
        }
    }
}

/// Registry of players, their generations and the match log.
#[derive(Clone, Debug)]
pub struct League {
    pub env: EnvId,
    pub k_factor: f64,
    pub initial_rating: f64,
    players: BTreeMap<PlayerId, PlayerRecord>,
    matches: Vec<MatchResult>,
}

impl League {
    pub fn new(env: EnvId) -> Self {
        League {
            env,
            k_factor: DEFAULT_K_FACTOR,
            initial_rating: DEFAULT_INITIAL_RATING,
            players: BTreeMap::new(),
            matches: Vec::new(),
        }
    }

    pub fn add_player(&mut self, player_id: PlayerId, role: Role, live: PolicyParameters) -> Result<(), LeagueError> {
        if self.players.contains_key(&player_id) {
            return Err(LeagueError::DuplicatePlayer(player_id));
        }
        self.players.insert(
            player_id.clone(),
            PlayerRecord {
                player_id,
                role,
                generations: Vec::new(),
                live: Some(Arc::new(live)),
            },
        );
        Ok(())
    }

    /// Register a fixed policy as a baseline player with one generation.
    pub fn add_baseline(&mut self, player_id: PlayerId, params: PolicyParameters) -> Result<GenerationRef, LeagueError> {
        self.add_player(player_id.clone(), Role::Baseline, params)?;
        let g = self.snapshot_generation(&player_id)?;
        Ok(GenerationRef::new(player_id, g))
    }

    pub fn set_live(&mut self, player_id: &PlayerId, params: Arc<PolicyParameters>) -> Result<(), LeagueError> {
        self.player_mut(player_id)?.live = Some(params);
        Ok(())
    }

    pub fn player(&self, player_id: &PlayerId) -> Result<&PlayerRecord, LeagueError> {
        self.players
            .get(player_id)
            .ok_or_else(|| LeagueError::UnknownPlayer(player_id.clone()))
    }

    fn player_mut(&mut self, player_id: &PlayerId) -> Result<&mut PlayerRecord, LeagueError> {
        self.players
            .get_mut(player_id)
            .ok_or_else(|| LeagueError::UnknownPlayer(player_id.clone()))
    }

    pub fn players(&self) -> impl Iterator<Item = &PlayerRecord> {
        self.players.values()
    }

    pub fn matches(&self) -> &[MatchResult] {
        &self.matches
    }

    /// Freeze the player's live parameters as the next generation.
    pub fn snapshot_generation(&mut self, player_id: &PlayerId) -> Result<u32, LeagueError> {
        let rec = self.player_mut(player_id)?;
        let live = rec.live.clone().ok_or_else(|| LeagueError::NoLiveParams(player_id.clone()))?;
        let index = rec.generations.len() as u32 + 1;
        rec.generations.push(Generation {
            index,
            checksum: live.checksum(),
            params: live,
        });
        Ok(index)
    }

    pub fn generation(&self, g: &GenerationRef) -> Result<&Generation, LeagueError> {
        let rec = self
            .players
            .get(&g.player_id)
            .ok_or_else(|| LeagueError::UnknownGeneration(g.clone()))?;
        g.generation
            .checked_sub(1)
            .and_then(|i| rec.generations.get(i as usize))
            .ok_or_else(|| LeagueError::UnknownGeneration(g.clone()))
    }

    /// Every frozen generation, ordered by player then index.
    pub fn all_generations(&self) -> Vec<GenerationRef> {
        self.players
            .values()
            .flat_map(|p| p.generations.iter().map(|g| GenerationRef::new(p.player_id.clone(), g.index)))
            .collect()
    }

    pub fn record_match(&mut self, mut result: MatchResult) -> Result<u64, LeagueError> {
        self.generation(&result.side_a)?;
        self.generation(&result.side_b)?;
        if result.side_a == result.side_b {
            return Err(LeagueError::InvalidMatch(format!("{} against itself", result.side_a)));
        }
        if result.game_count == 0 {
            return Err(LeagueError::InvalidMatch("game_count must be positive".into()));
        }
        result.id = self.matches.last().map_or(1, |m| m.id + 1);
        let id = result.id;
        self.matches.push(result);
        Ok(id)
    }

    /// Results of `a` against `b`, from `a`'s side.
    pub fn tally(&self, a: &GenerationRef, b: &GenerationRef) -> Tally {
        let mut t = Tally::default();
        for m in &self.matches {
            let n = u64::from(m.game_count);
            let flipped = if &m.side_a == a && &m.side_b == b {
                false
            } else if &m.side_a == b && &m.side_b == a {
                true
            } else {
                continue;
            };
            match (m.outcome, flipped) {
                (Outcome::Draw, _) => t.draws += n,
                (Outcome::AWin, false) | (Outcome::BWin, true) => t.wins += n,
                _ => t.losses += n,
            }
        }
        t
    }

    pub fn win_rate(&self, a: &GenerationRef, b: &GenerationRef) -> Option<f64> {
        self.tally(a, b).win_rate()
    }

    /// Empirical score of `player` against `opponent`, measured with the
    /// player's latest generation; 0.5 when they have not met.
    pub fn player_win_rate(&self, player: &PlayerId, opponent: &GenerationRef) -> f64 {
        let Ok(rec) = self.player(player) else { return 0.5 };
        let Some(latest) = rec.latest() else { return 0.5 };
        let me = GenerationRef::new(player.clone(), latest.index);
        let mut t = self.tally(&me, opponent);
        if t.games() == 0 {
            // Fall back to every generation of the player.
            for g in &rec.generations {
                t.add(self.tally(&GenerationRef::new(player.clone(), g.index), opponent));
            }
        }
        t.win_rate().unwrap_or(0.5)
    }

    /// Normalized prioritized-fictitious-self-play weights `(1 - p)^exponent`
    /// over every frozen generation, where `p` is the player's win rate.
    pub fn pfsp_weights(&self, player: &PlayerId, exponent: f64) -> Vec<(GenerationRef, f64)> {
        let candidates: Vec<GenerationRef> = self
            .all_generations()
            .into_iter()
            .filter(|g| self.player(&g.player_id).is_ok_and(|p| p.role != Role::Baseline))
            .collect();
        let pool = self.pfsp_raw(player, &candidates, exponent);
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return pool.into_iter().map(|(g, _)| (g, 0.0)).collect();
        }
        pool.into_iter().map(|(g, w)| (g, w / total)).collect()
    }

    /// Unnormalized `(1 - p)^exponent` weights over an explicit pool.
    pub fn pfsp_raw(&self, player: &PlayerId, pool: &[GenerationRef], exponent: f64) -> Vec<(GenerationRef, f64)> {
        pool.iter()
            .map(|g| (g.clone(), (1.0 - self.player_win_rate(player, g)).powf(exponent)))
            .collect()
    }

    /// Pick the opponent for one rollout. Pure in `(self, strategy, rng)`.
    pub fn sample_opponent<R: Rng + ?Sized>(
        &self,
        player: &PlayerId,
        strategy: Strategy,
        rng: &mut R,
    ) -> Result<Opponent, LeagueError> {
        let rec = self.player(player)?;
        let empty = || LeagueError::EmptyPool {
            player: player.clone(),
            strategy: strategy.name().into(),
        };
        let live = |id: &PlayerId| Opponent {
            player_id: id.clone(),
            generation: None,
        };
        let frozen = |g: &GenerationRef| Opponent {
            player_id: g.player_id.clone(),
            generation: Some(g.generation),
        };
        match strategy {
            Strategy::NaiveSelf => rec
                .latest()
                .map(|g| Opponent {
                    player_id: player.clone(),
                    generation: Some(g.index),
                })
                .ok_or_else(empty),
            Strategy::SelfPlay8020 => {
                let u: f64 = rng.gen();
                if u < SELF_PLAY_LIVE_SHARE || rec.generations.is_empty() {
                    Ok(live(player))
                } else {
                    let i = rng.gen_range(0..rec.generations.len());
                    Ok(Opponent {
                        player_id: player.clone(),
                        generation: Some(rec.generations[i].index),
                    })
                }
            }
            Strategy::Pfsp { exponent } => {
                let weights = self.pfsp_weights(player, exponent);
                weighted_pick(&weights, rng).map(frozen).ok_or_else(empty)
            }
            Strategy::UniformPast => {
                let all = self.all_generations();
                if all.is_empty() {
                    return Err(empty());
                }
                Ok(frozen(&all[rng.gen_range(0..all.len())]))
            }
            Strategy::RoleBased => match rec.role {
                Role::MainExploiter => self
                    .players
                    .values()
                    .find(|p| p.role == Role::Main && p.live.is_some())
                    .map(|p| live(&p.player_id))
                    .ok_or_else(empty),
                Role::Baseline => Err(empty()),
                Role::Main | Role::LeagueExploiter | Role::Peer => {
                    let weights = self.pfsp_weights(player, 2.0);
                    weighted_pick(&weights, rng).map(frozen).ok_or_else(empty)
                }
            },
        }
    }

    /// Parameters an opponent reference resolves to.
    pub fn opponent_params(&self, o: &Opponent) -> Result<Arc<PolicyParameters>, LeagueError> {
        match o.generation {
            None => self
                .player(&o.player_id)?
                .live
                .clone()
                .ok_or_else(|| LeagueError::NoLiveParams(o.player_id.clone())),
            Some(g) => Ok(self.generation(&GenerationRef::new(o.player_id.clone(), g))?.params.clone()),
        }
    }

    /// Sequential Elo over the match log in id order. Every generation
    /// starts at the initial rating.
    pub fn elo_ratings(&self) -> Result<BTreeMap<GenerationRef, f64>, LeagueError> {
        if self.matches.is_empty() {
            return Err(LeagueError::NoMatches);
        }
        Ok(self.ratings_or_initial())
    }

    /// Like [`League::elo_ratings`] but returns initial ratings when no
    /// match has been played.
    pub fn ratings_or_initial(&self) -> BTreeMap<GenerationRef, f64> {
        let mut ordered: Vec<&MatchResult> = self.matches.iter().collect();
        ordered.sort_by_key(|m| m.id);
        run_elo(&self.all_generations(), ordered, self.k_factor, self.initial_rating)
    }

    /// Checksums of all frozen generations still match their contents.
    pub fn verify_generations(&self) -> Result<(), LeagueError> {
        for p in self.players.values() {
            for g in &p.generations {
                if g.params.checksum() != g.checksum {
                    return Err(LeagueError::ChecksumMismatch {
                        generation: GenerationRef::new(p.player_id.clone(), g.index),
                    });
                }
            }
        }
        Ok(())
    }
}

fn weighted_pick<'a, R: Rng + ?Sized>(weights: &'a [(GenerationRef, f64)], rng: &mut R) -> Option<&'a GenerationRef> {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    let mut last = None;
    for (g, w) in weights {
        if *w <= 0.0 {
            continue;
        }
        last = Some(g);
        if x < *w {
            return Some(g);
        }
        x -= w;
    }
    last
}
