//! Topology comparison over a config matrix.
//!
//! A matrix document is a config document whose `row.<name>.<key>` lines
//! override the shared keys for one row:
//!
//! ```text
//! env.id = chain_mdp
//! run.frames = 20000
//! delay.actor0.env_step = const:100
//! row.sync.topology.kind = sync_barrier
//! row.async.topology.kind = async_trajectory
//! ```

use std::fmt;

use crate::config::{ConfigError, ExperimentConfig};
use crate::experiment::{run_experiment, RunError, RunOptions};
use crate::metrics::RunSummary;

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub name: String,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, Default)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn row(&self, name: &str) -> Option<&RunSummary> {
        self.rows.iter().find(|r| r.name == name).map(|r| &r.summary)
    }
}

impl fmt::Display for BenchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(3);
        writeln!(
            f,
            "{:<width$}  {:<17}  {:>12}  {:>12}  {:>9}  {:>7}",
            "row", "topology", "frames/sec", "updates/sec", "mean lag", "max lag"
        )?;
        for r in &self.rows {
            let s = &r.summary;
            writeln!(
                f,
                "{:<width$}  {:<17}  {:>12.3}  {:>12.3}  {:>9.3}  {:>7}",
                r.name, s.topology, s.frames_per_second, s.updates_per_second, s.mean_lag, s.max_lag
            )?;
        }
        Ok(())
    }
}

/// Split a matrix document into named row configs, in first-mention order.
pub fn parse_matrix<I>(text: &str, vars: I) -> Result<Vec<(String, ExperimentConfig)>, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut shared = String::new();
    let mut rows: Vec<(String, Vec<(String, String)>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let Some(rest) = line.strip_prefix("row.") else {
            shared.push_str(raw);
            shared.push('\n');
            continue;
        };
        let (k, v) = rest.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (name, key) = k.trim().split_once('.').ok_or_else(|| ConfigError::UnknownKey(format!("row.{}", k.trim())))?;
        let entry = match rows.iter().position(|(n, _)| n == name) {
            Some(p) => &mut rows[p].1,
            None => {
                rows.push((name.to_string(), Vec::new()));
                &mut rows.last_mut().expect("just pushed").1
            }
        };
        entry.push((key.to_string(), v.trim().to_string()));
    }
    let base = ExperimentConfig::parse_with_env(&shared, vars)?;
    if rows.is_empty() {
        return Ok(vec![(base.topology.kind.to_string(), base)]);
    }
    rows.into_iter()
        .map(|(name, overrides)| {
            let mut cfg = base.clone();
            for (k, v) in overrides {
                cfg.set(&k, &v)?;
            }
            cfg.validate()?;
            Ok((name, cfg))
        })
        .collect()
}

/// Run every row to completion and tabulate throughput and lag.
pub fn bench_topologies(rows: &[(String, ExperimentConfig)]) -> Result<BenchTable, RunError> {
    if let Some((_, first)) = rows.first() {
        for (name, cfg) in rows {
            if cfg.env.id != first.env.id {
                return Err(RunError::HeterogeneousEnvs(format!("env.id (row {name})")));
            }
            if cfg.run.frames != first.run.frames {
                return Err(RunError::HeterogeneousEnvs(format!("run.frames (row {name})")));
            }
        }
    }
    let mut table = BenchTable::default();
    for (name, cfg) in rows {
        let report = run_experiment(cfg.clone(), &RunOptions::default())?;
        table.rows.push(BenchRow {
            name: name.clone(),
            summary: report.summary,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_inherit_shared_keys() {
        let text = "run.frames = 640\nrow.a.topology.kind = sync_barrier\nrow.b.topology.kind = async_trajectory\nrow.a.seed = 3\n";
        let rows = parse_matrix(text, std::iter::empty()).unwrap();
        assert_eq!(rows.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(rows[0].1.seed, 3);
        assert_eq!(rows[1].1.seed, ExperimentConfig::default().seed);
        assert!(rows.iter().all(|(_, c)| c.run.frames == 640));
    }

    #[test]
    fn differing_envs_rejected() {
        let rows = parse_matrix(
            "row.a.env.id = chain_mdp\nrow.b.env.id = matrix_rps\nrow.b.coop.agent_id_feature = true\n",
            std::iter::empty(),
        )
        .unwrap();
        assert!(matches!(bench_topologies(&rows), Err(RunError::HeterogeneousEnvs(_))));
    }
}
