use std::collections::BTreeMap;

use rand::Rng;

use super::{GenerationRef, League, LeagueError, MatchResult, Outcome, Role};
use crate::env::{make_env, EnvId, EnvSpec, Environment};
use crate::policy::{agent_input, infer, Arch, PolicyParameters};
use crate::seed::{self, DetRng};
use crate::PlayerId;

/// Which generations meet in an evaluation round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// Every unordered pair of frozen generations.
    AllPairs,
    /// Every non-baseline generation against every baseline.
    VsBaselines,
    /// The player's newest generation against every other generation.
    Latest(PlayerId),
}

/// Tabular parameters that pick `actions[state]` with near certainty.
pub fn scripted_params(player: PlayerId, states: usize, action_count: usize, actions: &[usize]) -> PolicyParameters {
    let arch = Arch::Tabular {
        states,
        actions: action_count,
    };
    let mut values = vec![0.0f32; arch.param_count()];
    for (s, &a) in actions.iter().enumerate().take(states) {
        values[s * (action_count + 1) + a] = 50.0;
    }
    PolicyParameters::new(player, 1, arch, values).expect("layout matches arch")
}

/// Sample one agent's action from a player's policy.
pub fn policy_action<R: Rng + ?Sized>(
    params: &PolicyParameters,
    spec: &EnvSpec,
    obs: &[f64],
    mask: &[bool],
    agent: usize,
    rng: &mut R,
) -> Result<usize, LeagueError> {
    let x = agent_input(obs, agent, spec.agents_per_player, true);
    Ok(infer(params, &x, mask, rng)?.action)
}

fn fits(params: &PolicyParameters, spec: &EnvSpec) -> bool {
    let id_width = if spec.agents_per_player > 1 { spec.agents_per_player } else { 0 };
    let input_ok = match params.arch {
        Arch::Tabular { states, .. } => states == spec.obs_dim.max(1) && id_width == 0,
        _ => params.arch.input_dim() == spec.obs_dim + id_width,
    };
    input_ok && params.arch.actions() == spec.action_dim
}

/// Play one episode with `seats[p]` controlling player `p`; returns the
/// undiscounted team return of each player and the episode length.
fn play_episode(
    env: &mut dyn Environment,
    seats: &[&PolicyParameters],
    seed: u64,
    rngs: &mut [DetRng],
) -> Result<(Vec<f64>, u32), LeagueError> {
    let spec = env.spec().clone();
    let mut obs = env.reset(seed);
    let mut returns = vec![0.0; spec.players];
    let mut steps = 0;
    while !env.is_done() {
        let mut joint = Vec::with_capacity(spec.players);
        for (p, params) in seats.iter().enumerate() {
            let o = &obs[p];
            let actions = (0..spec.agents_per_player)
                .map(|a| policy_action(params, &spec, &o.per_agent_obs[a], &o.action_mask[a], a, &mut rngs[p]))
                .collect::<Result<Vec<_>, _>>()?;
            joint.push(actions);
        }
        let r = env.step(&joint)?;
        for (p, rew) in r.rewards.iter().enumerate() {
            returns[p] += rew.iter().sum::<f64>();
        }
        obs = r.observations;
        steps += 1;
    }
    Ok((returns, steps))
}

/// One game between `a` and `b` from `a`'s point of view. In two-player
/// games `a` sits at seat 0 unless `swap`; single-player games are scored by
/// comparing (return, -length) of one episode each from the same seed.
pub fn play_match(
    env_id: EnvId,
    a: &PolicyParameters,
    b: &PolicyParameters,
    seed: u64,
    swap: bool,
) -> Result<Outcome, LeagueError> {
    let mut env = make_env(env_id);
    let spec = env.spec().clone();
    if !fits(a, &spec) || !fits(b, &spec) {
        return Err(LeagueError::EnvPlayerMismatch { env: env_id });
    }
    let stream = |i| seed::rng(seed::derive(seed, i));
    let (score_a, score_b) = match spec.players {
        1 => {
            let (ra, la) = play_episode(env.as_mut(), &[a], seed, &mut [stream(0)])?;
            let (rb, lb) = play_episode(env.as_mut(), &[b], seed, &mut [stream(0)])?;
            ((ra[0], -f64::from(la)), (rb[0], -f64::from(lb)))
        }
        2 => {
            let seats: [&PolicyParameters; 2] = if swap { [b, a] } else { [a, b] };
            let (r, _) = play_episode(env.as_mut(), &seats, seed, &mut [stream(0), stream(1)])?;
            let (ra, rb) = if swap { (r[1], r[0]) } else { (r[0], r[1]) };
            ((ra, 0.0), (rb, 0.0))
        }
        _ => return Err(LeagueError::EnvPlayerMismatch { env: env_id }),
    };
    Ok(match score_a.partial_cmp(&score_b) {
        Some(std::cmp::Ordering::Greater) => Outcome::AWin,
        Some(std::cmp::Ordering::Less) => Outcome::BWin,
        _ => Outcome::Draw,
    })
}

impl League {
    fn pairs(&self, pairing: &Pairing) -> Result<Vec<(GenerationRef, GenerationRef)>, LeagueError> {
        let all = self.all_generations();
        let is_baseline = |g: &GenerationRef| self.player(&g.player_id).is_ok_and(|p| p.role == Role::Baseline);
        Ok(match pairing {
            Pairing::AllPairs => {
                let mut v = Vec::new();
                for i in 0..all.len() {
                    for j in i + 1..all.len() {
                        v.push((all[i].clone(), all[j].clone()));
                    }
                }
                v
            }
            Pairing::VsBaselines => {
                let mut v = Vec::new();
                for g in all.iter().filter(|g| !is_baseline(g)) {
                    for b in all.iter().filter(|g| is_baseline(g)) {
                        v.push((g.clone(), b.clone()));
                    }
                }
                v
            }
            Pairing::Latest(player) => {
                let rec = self.player(player)?;
                let Some(latest) = rec.latest() else {
                    return Ok(Vec::new());
                };
                let me = GenerationRef::new(player.clone(), latest.index);
                all.into_iter().filter(|g| *g != me).map(|g| (me.clone(), g)).collect()
            }
        })
    }

    /// Play `games_per_pair` games for every pairing with fixed seeds,
    /// alternating seats, record one result per game and return the
    /// recomputed ratings. Policies are only read.
    pub fn evaluation_round(
        &mut self,
        pairing: &Pairing,
        games_per_pair: u32,
        seed: u64,
    ) -> Result<BTreeMap<GenerationRef, f64>, LeagueError> {
        let pairs = self.pairs(pairing)?;
        let mut results = Vec::new();
        for (pi, (a, b)) in pairs.iter().enumerate() {
            let pa = self.generation(a)?.params.clone();
            let pb = self.generation(b)?.params.clone();
            let pair_seed = seed::derive(seed, pi as u64);
            for g in 0..games_per_pair {
                let game_seed = seed::derive(pair_seed, u64::from(g / 2));
                let outcome = play_match(self.env, &pa, &pb, game_seed, g % 2 == 1)?;
                results.push(MatchResult::new(a.clone(), b.clone(), outcome, 1));
            }
        }
        for r in results {
            self.record_match(r)?;
        }
        Ok(self.ratings_or_initial())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CHAIN_RIGHT, ROCK, PAPER};
    use crate::league::Role;

    #[test]
    fn best_response_beats_rock() {
        let mut l = League::new(EnvId::MatrixRps);
        let rock = l.add_baseline("rock".into(), scripted_params("rock".into(), 1, 3, &[ROCK])).unwrap();
        l.add_player("learner".into(), Role::Peer, scripted_params("learner".into(), 1, 3, &[PAPER]))
            .unwrap();
        l.snapshot_generation(&"learner".into()).unwrap();
        let learner = GenerationRef::new("learner", 1);
        let ratings = l.evaluation_round(&Pairing::VsBaselines, 20, 3).unwrap();
        assert_eq!(l.win_rate(&learner, &rock), Some(1.0));
        assert!(ratings[&learner] > ratings[&rock]);
    }

    #[test]
    fn zero_games_change_nothing() {
        let mut l = League::new(EnvId::MatrixRps);
        l.add_baseline("rock".into(), scripted_params("rock".into(), 1, 3, &[ROCK])).unwrap();
        l.add_baseline("paper".into(), scripted_params("paper".into(), 1, 3, &[PAPER])).unwrap();
        let before = l.ratings_or_initial();
        assert_eq!(l.evaluation_round(&Pairing::AllPairs, 0, 1).unwrap(), before);
        assert!(l.matches().is_empty());
    }

    #[test]
    fn chain_prefers_shorter_success() {
        let fast = scripted_params("fast".into(), 5, 2, &[CHAIN_RIGHT; 5]);
        let slow = scripted_params("slow".into(), 5, 2, &[0; 5]);
        assert_eq!(play_match(EnvId::ChainMdp, &fast, &slow, 0, false).unwrap(), Outcome::AWin);
        assert_eq!(play_match(EnvId::ChainMdp, &fast, &fast, 0, false).unwrap(), Outcome::Draw);
    }

    #[test]
    fn mismatched_policy_rejected() {
        let chain = scripted_params("c".into(), 5, 2, &[1; 5]);
        let rps = scripted_params("r".into(), 1, 3, &[0]);
        assert!(matches!(
            play_match(EnvId::MatrixRps, &chain, &rps, 0, false),
            Err(LeagueError::EnvPlayerMismatch { .. })
        ));
    }
}
