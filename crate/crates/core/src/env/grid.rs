use std::collections::BTreeMap;

use rand::Rng;

use super::{check_actions, ActionId, EnvError, EnvId, EnvSpec, Environment, JointObservation, StepResult};
use crate::seed;

/// No-op, up, down, left, right, expressed in each player's own frame.
pub const GRID_ACTIONS: usize = 5;

const PLAYERS: usize = 2;
const AGENTS: usize = 2;
const VISION: i64 = 2;
const CAPTURE_REWARD: f64 = 1.0;
const TOUCH_BONUS: f64 = 0.1;
const OBS_DIM: usize = 14;

type Cell = (i64, i64);

/// Two-team capture-the-flag on a square grid.
///
/// Player 0's base sits in the middle of row 0, player 1's in the middle of the
/// last row, each holding that team's flag. An agent that steps onto the
/// enemy base picks up the enemy flag (+0.1 the first time that agent touches
/// it); carrying it back to its own base captures it: +1 to every agent of the
/// capturing team, -1 to every agent of the other, and the episode ends.
///
/// Observations and actions of player 1 are rotated by 180 degrees, so both
/// players see their own base on row 0. Opponents are only visible within
/// Chebyshev distance 2 of some teammate.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCapture {
    spec: EnvSpec,
    size: i64,
    pos: [[Cell; AGENTS]; PLAYERS],
    carrying: [[bool; AGENTS]; PLAYERS],
    touched: [[bool; AGENTS]; PLAYERS],
    steps: u32,
    done: bool,
}

impl Default for GridCapture {
    fn default() -> Self {
        GridCapture::new(5, 40)
    }
}

impl GridCapture {
    pub fn new(size: usize, max_episode_steps: u32) -> Self {
        assert!(size >= 2, "grid must be at least 2x2");
        let mut env = GridCapture {
            spec: EnvSpec {
                env_id: EnvId::GridCapture,
                players: PLAYERS,
                agents_per_player: AGENTS,
                obs_dim: OBS_DIM,
                action_dim: GRID_ACTIONS,
                max_episode_steps,
            },
            size: size as i64,
            pos: [[(0, 0); AGENTS]; PLAYERS],
            carrying: [[false; AGENTS]; PLAYERS],
            touched: [[false; AGENTS]; PLAYERS],
            steps: 0,
            done: false,
        };
        env.reset(0);
        env
    }

    fn base(&self, player: usize) -> Cell {
        let row = if player == 0 { 0 } else { self.size - 1 };
        (row, self.size / 2)
    }

    /// Absolute displacement of `action` for `player`.
    fn delta(player: usize, action: ActionId) -> Cell {
        let (dr, dc) = match action {
            1 => (-1, 0),
            2 => (1, 0),
            3 => (0, -1),
            4 => (0, 1),
            _ => (0, 0),
        };
        if player == 0 {
            (dr, dc)
        } else {
            (-dr, -dc)
        }
    }

    fn inside(&self, (r, c): Cell) -> bool {
        (0..self.size).contains(&r) && (0..self.size).contains(&c)
    }

    fn mask_for(&self, player: usize, agent: usize) -> Vec<bool> {
        let (r, c) = self.pos[player][agent];
        (0..GRID_ACTIONS)
            .map(|a| {
                if self.done {
                    return false;
                }
                let (dr, dc) = Self::delta(player, a);
                self.inside((r + dr, c + dc))
            })
            .collect()
    }

    /// Coordinates in `player`'s frame, scaled to [0, 1].
    fn view(&self, player: usize, (r, c): Cell) -> (f64, f64) {
        let (r, c) = if player == 0 {
            (r, c)
        } else {
            (self.size - 1 - r, self.size - 1 - c)
        };
        let scale = (self.size - 1) as f64;
        (r as f64 / scale, c as f64 / scale)
    }

    fn visible(&self, player: usize, target: Cell) -> bool {
        self.pos[player]
            .iter()
            .any(|&(r, c)| (r - target.0).abs().max((c - target.1).abs()) <= VISION)
    }

    fn agent_obs(&self, player: usize, agent: usize) -> Vec<f64> {
        let enemy = 1 - player;
        let mate = 1 - agent;
        let mut obs = Vec::with_capacity(OBS_DIM);
        let (r, c) = self.view(player, self.pos[player][agent]);
        obs.extend([r, c]);
        let (r, c) = self.view(player, self.pos[player][mate]);
        obs.extend([r, c]);
        for opp in 0..AGENTS {
            let cell = self.pos[enemy][opp];
            if self.visible(player, cell) {
                let (r, c) = self.view(player, cell);
                obs.extend([1.0, r, c]);
            } else {
                obs.extend([0.0, 0.0, 0.0]);
            }
        }
        obs.push(f64::from(u8::from(self.carrying[player][agent])));
        obs.push(f64::from(u8::from(self.carrying[player][mate])));
        let own_flag_taken = self.carrying[enemy].iter().any(|&b| b);
        obs.push(f64::from(u8::from(own_flag_taken)));
        obs.push(f64::from(self.steps) / f64::from(self.spec.max_episode_steps.max(1)));
        obs
    }

    fn player_obs(&self, player: usize) -> JointObservation {
        JointObservation {
            per_agent_obs: (0..AGENTS).map(|a| self.agent_obs(player, a)).collect(),
            action_mask: (0..AGENTS).map(|a| self.mask_for(player, a)).collect(),
            episode_step: self.steps,
        }
    }

    /// Compact state key for exhaustive reachability checks.
    pub fn state_key(&self) -> (Vec<Cell>, Vec<bool>, Vec<bool>, bool) {
        (
            self.pos.iter().flatten().copied().collect(),
            self.carrying.iter().flatten().copied().collect(),
            self.touched.iter().flatten().copied().collect(),
            self.done,
        )
    }
}

impl Environment for GridCapture {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<JointObservation> {
        let mut rng = seed::rng(seed);
        for player in 0..PLAYERS {
            let row = self.base(player).0;
            for agent in 0..AGENTS {
                self.pos[player][agent] = (row, rng.gen_range(0..self.size));
            }
        }
        self.carrying = [[false; AGENTS]; PLAYERS];
        self.touched = [[false; AGENTS]; PLAYERS];
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, joint_actions: &[Vec<ActionId>]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        check_actions(&self.spec, &self.observe(), joint_actions)?;

        for player in 0..PLAYERS {
            for agent in 0..AGENTS {
                let (dr, dc) = Self::delta(player, joint_actions[player][agent]);
                let (r, c) = self.pos[player][agent];
                self.pos[player][agent] = (r + dr, c + dc);
            }
        }

        let mut rewards = vec![vec![0.0; AGENTS]; PLAYERS];
        for player in 0..PLAYERS {
            let enemy = 1 - player;
            let enemy_base = self.base(enemy);
            for agent in 0..AGENTS {
                let flag_free = !self.carrying[player].iter().any(|&b| b);
                if self.pos[player][agent] == enemy_base && flag_free {
                    self.carrying[player][agent] = true;
                    if !self.touched[player][agent] {
                        self.touched[player][agent] = true;
                        rewards[player][agent] += TOUCH_BONUS;
                    }
                }
            }
        }

        let mut captured = [false; PLAYERS];
        for (player, cap) in captured.iter_mut().enumerate() {
            let home = self.base(player);
            *cap = (0..AGENTS).any(|a| self.carrying[player][a] && self.pos[player][a] == home);
        }
        for player in 0..PLAYERS {
            if captured[player] {
                for agent in 0..AGENTS {
                    rewards[player][agent] += CAPTURE_REWARD;
                    rewards[1 - player][agent] -= CAPTURE_REWARD;
                }
            }
        }

        self.steps += 1;
        self.done = captured.iter().any(|&c| c) || self.steps >= self.spec.max_episode_steps;

        let mut info = BTreeMap::new();
        for (player, r) in rewards.iter().enumerate() {
            info.insert(format!("team_reward_p{player}"), r.iter().sum());
            info.insert(format!("capture_p{player}"), f64::from(u8::from(captured[player])));
        }
        Ok(StepResult {
            observations: self.observe(),
            rewards,
            done: self.done,
            info,
        })
    }

    fn observe(&self) -> Vec<JointObservation> {
        (0..PLAYERS).map(|p| self.player_obs(p)).collect()
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{HashSet, VecDeque};

    use super::*;

    const NOOP: ActionId = 0;
    const UP: ActionId = 1;
    const DOWN: ActionId = 2;

    #[test]
    fn same_seed_same_observations() {
        let mut a = GridCapture::default();
        let mut b = GridCapture::default();
        assert_eq!(a.reset(7), b.reset(7));
        let acts = vec![vec![DOWN, NOOP], vec![DOWN, NOOP]];
        assert_eq!(a.step(&acts).unwrap(), b.step(&acts).unwrap());
    }

    #[test]
    fn both_noop_until_timeout() {
        let mut env = GridCapture::default();
        env.reset(3);
        let noop = vec![vec![NOOP; 2], vec![NOOP; 2]];
        for t in 0..40 {
            let res = env.step(&noop).unwrap();
            assert_eq!(res.done, t == 39);
            if t == 39 {
                assert_eq!(res.rewards, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
            }
        }
        assert_eq!(env.step(&noop), Err(EnvError::SteppedAfterDone));
    }

    #[test]
    fn pickup_and_return_captures() {
        let mut env = GridCapture::new(3, 10);
        env.reset(0);
        env.pos = [[(0, 1), (0, 0)], [(2, 0), (2, 2)]];
        let mut acts = vec![vec![DOWN, NOOP], vec![NOOP, NOOP]];
        let r1 = env.step(&acts).unwrap();
        assert_eq!(r1.rewards[0][0], 0.0);
        let r2 = env.step(&acts).unwrap();
        assert!((r2.rewards[0][0] - TOUCH_BONUS).abs() < 1e-12);
        assert!(env.carrying[0][0]);
        acts[0][0] = UP;
        env.step(&acts).unwrap();
        let r4 = env.step(&acts).unwrap();
        assert!(r4.done);
        assert_eq!(r4.rewards[0], vec![1.0, 1.0]);
        assert_eq!(r4.rewards[1], vec![-1.0, -1.0]);
        assert_eq!(r4.info["team_reward_p0"], 2.0);
        assert_eq!(r4.info["team_reward_p1"], -2.0);
    }

    #[test]
    fn player_frames_are_mirrored() {
        let mut env = GridCapture::default();
        env.reset(0);
        env.pos = [[(0, 2), (0, 2)], [(4, 2), (4, 2)]];
        let obs = env.observe();
        assert_eq!(obs[0].per_agent_obs[0][..2], obs[1].per_agent_obs[0][..2]);
        assert_eq!(obs[0].action_mask, obs[1].action_mask);
    }

    /// Exhaustive over every reachable state of a 3x3 grid: each masked-off
    /// action is rejected, each legal one is accepted.
    #[test]
    fn mask_soundness_on_small_grid() {
        let mut start = GridCapture::new(3, 1000);
        start.reset(11);
        let mut seen = HashSet::new();
        let mut frontier = VecDeque::from([start]);
        let mut checked = 0usize;
        while let Some(env) = frontier.pop_front() {
            if env.done || !seen.insert(env.state_key()) {
                continue;
            }
            let obs = env.observe();
            for player in 0..PLAYERS {
                for agent in 0..AGENTS {
                    for (action, &legal) in obs[player].action_mask[agent].iter().enumerate() {
                        if legal {
                            continue;
                        }
                        let mut probe = env.clone();
                        let mut acts = vec![vec![NOOP; AGENTS]; PLAYERS];
                        acts[player][agent] = action;
                        assert!(matches!(
                            probe.step(&acts),
                            Err(EnvError::IllegalAction { .. })
                        ));
                        checked += 1;
                    }
                }
            }
            // Expand with player 0 agent 0 and player 1 agent 0 moving; the
            // other agents sweep through their options over the episode steps.
            for a in 0..GRID_ACTIONS {
                for b in 0..GRID_ACTIONS {
                    let m0 = &obs[0].action_mask[0];
                    let m1 = &obs[1].action_mask[0];
                    if !(m0[a] && m1[b]) {
                        continue;
                    }
                    let k = (env.steps as usize) % GRID_ACTIONS;
                    let other0 = if obs[0].action_mask[1][k] { k } else { NOOP };
                    let other1 = if obs[1].action_mask[1][k] { k } else { NOOP };
                    let mut next = env.clone();
                    next.step(&[vec![a, other0], vec![b, other1]]).unwrap();
                    frontier.push_back(next);
                }
            }
        }
        assert!(checked > 1000, "only {checked} masked actions checked");
    }
}
