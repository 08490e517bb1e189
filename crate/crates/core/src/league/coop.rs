use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LeagueError;
use crate::learn::Trajectory;
use crate::PlayerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Each agent learns with its teammates treated as part of the environment.
    Independent,
    /// All of a player's agents are optimized as one problem.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooperationMode {
    pub mode: TrainingMode,
    pub shared_policy: bool,
    /// Agent one-hot appended to observations (done by actors at inference).
    pub agent_id_feature: bool,
}

impl Default for CooperationMode {
    fn default() -> Self {
        CooperationMode {
            mode: TrainingMode::Independent,
            shared_policy: true,
            agent_id_feature: true,
        }
    }
}

/// One time step of one episode across a player's agents.
#[derive(Clone, Debug, PartialEq)]
pub struct JointRow {
    pub episode_id: u64,
    pub episode_step: u32,
    /// Per agent: `(trajectory index, step index)` into the batch.
    pub steps: Vec<Option<(usize, usize)>>,
    /// Sum of the agents' rewards at this step.
    pub team_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub player_id: PlayerId,
    /// Set when the batch holds a single agent's data.
    pub agent: Option<usize>,
    pub trajectories: Vec<Trajectory>,
    /// Filled in joint mode only.
    pub joint_rows: Vec<JointRow>,
}

impl TrainingBatch {
    pub fn sample_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Group finished trajectories into learner batches according to the
/// cooperation mode.
pub fn build_training_batches(
    mode: CooperationMode,
    agents: usize,
    trajectories: Vec<Trajectory>,
) -> Result<Vec<TrainingBatch>, LeagueError> {
    let mut by_player: BTreeMap<PlayerId, Vec<Trajectory>> = BTreeMap::new();
    for t in trajectories {
        let Some(first) = t.transitions.first() else { continue };
        if let Some(bad) = t.transitions.iter().find(|s| s.agent_id >= agents || s.agent_id != first.agent_id) {
            return Err(LeagueError::MissingAgentTag {
                agent: bad.agent_id,
                agents,
            });
        }
        by_player.entry(first.player_id.clone()).or_default().push(t);
    }
    let mut out = Vec::new();
    for (player_id, trajs) in by_player {
        match (mode.mode, mode.shared_policy) {
            (TrainingMode::Independent, true) => out.push(TrainingBatch {
                player_id,
                agent: None,
                trajectories: trajs,
                joint_rows: Vec::new(),
            }),
            (TrainingMode::Independent, false) => {
                let mut per_agent: BTreeMap<usize, Vec<Trajectory>> = BTreeMap::new();
                for t in trajs {
                    per_agent.entry(t.transitions[0].agent_id).or_default().push(t);
                }
                for (agent, trajectories) in per_agent {
                    out.push(TrainingBatch {
                        player_id: player_id.clone(),
                        agent: Some(agent),
                        trajectories,
                        joint_rows: Vec::new(),
                    });
                }
            }
            (TrainingMode::Joint, _) => {
                let joint_rows = align(&trajs, agents);
                out.push(TrainingBatch {
                    player_id,
                    agent: None,
                    trajectories: trajs,
                    joint_rows,
                });
            }
        }
    }
    Ok(out)
}

fn align(trajs: &[Trajectory], agents: usize) -> Vec<JointRow> {
    let mut rows: BTreeMap<(u64, u32), JointRow> = BTreeMap::new();
    for (ti, t) in trajs.iter().enumerate() {
        for (si, s) in t.transitions.iter().enumerate() {
            let row = rows.entry((s.episode_id, s.episode_step)).or_insert_with(|| JointRow {
                episode_id: s.episode_id,
                episode_step: s.episode_step,
                steps: vec![None; agents],
                team_reward: 0.0,
            });
            row.steps[s.agent_id] = Some((ti, si));
            row.team_reward += s.reward;
        }
    }
    rows.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::Transition;

    fn traj(player: &str, agent: usize, episode: u64, rewards: &[f64]) -> Trajectory {
        let steps = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                obs: vec![],
                mask: vec![true],
                action: 0,
                reward: r,
                next_obs: vec![],
                done: false,
                behavior_log_prob: 0.0,
                value_estimate: 0.0,
                param_version: 1,
                agent_id: agent,
                player_id: player.into(),
                episode_id: episode,
                episode_step: i as u32,
            })
            .collect();
        Trajectory::new(steps, 0.0).unwrap()
    }

    #[test]
    fn shared_merges_distinct_partitions() {
        let data = vec![traj("p", 0, 0, &[1.0, 2.0]), traj("p", 1, 0, &[3.0])];
        let shared = build_training_batches(CooperationMode::default(), 2, data.clone()).unwrap();
        assert_eq!(shared.len(), 1);
        assert_eq!(shared[0].sample_count(), 3);
        let distinct = CooperationMode {
            shared_policy: false,
            ..CooperationMode::default()
        };
        let split = build_training_batches(distinct, 2, data).unwrap();
        assert_eq!(split.iter().map(|b| b.agent).collect::<Vec<_>>(), vec![Some(0), Some(1)]);
    }

    #[test]
    fn joint_rows_sum_team_reward() {
        let data = vec![traj("p", 0, 5, &[1.0, 0.0]), traj("p", 1, 5, &[0.5, 2.0])];
        let joint = CooperationMode {
            mode: TrainingMode::Joint,
            ..CooperationMode::default()
        };
        let b = build_training_batches(joint, 2, data).unwrap();
        let rewards: Vec<f64> = b[0].joint_rows.iter().map(|r| r.team_reward).collect();
        assert_eq!(rewards, vec![1.5, 2.0]);
        assert!(b[0].joint_rows.iter().all(|r| r.steps.iter().all(Option::is_some)));
    }

    #[test]
    fn agent_out_of_range() {
        let err = build_training_batches(CooperationMode::default(), 1, vec![traj("p", 3, 0, &[0.0])]);
        assert!(matches!(err, Err(LeagueError::MissingAgentTag { agent: 3, agents: 1 })));
    }
}
