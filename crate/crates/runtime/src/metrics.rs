//! Metrics records, the line-file sink and the end-of-run summary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ddrl_core::coord::{lag_stats, LagRecord};
use serde::Serialize;

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    /// Seconds since the start of the run (simulated seconds on the simulated clock).
    pub timestamp: f64,
    pub frames_per_second: f64,
    pub trajectories_per_second: f64,
    pub learner_updates_per_second: f64,
    pub mean_lag: f64,
    pub max_lag: u64,
    pub queue_depth: u64,
    pub busy_fraction: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default)]
struct Busy {
    since: Option<u64>,
    total: u64,
    at_last_tick: u64,
}

impl Busy {
    fn upto(&self, now: u64) -> u64 {
        self.total + self.since.map_or(0, |s| now.saturating_sub(s))
    }
}

/// Windowed counters turned into [`MetricsRecord`]s at a fixed cadence.
pub struct MetricsCollector {
    units_per_second: f64,
    cadence: u64,
    last_tick: u64,
    frames: u64,
    trajectories: u64,
    updates: u64,
    lag_seen: usize,
    workers: Vec<(String, Busy)>,
    sink: Option<BufWriter<File>>,
    records: Vec<MetricsRecord>,
}

impl MetricsCollector {
    /// `cadence` and all times are in clock units; `units_per_second`
    /// converts them (1000 for ticks and for milliseconds).
    pub fn new(cadence: u64, units_per_second: f64, workers: Vec<String>) -> Self {
        MetricsCollector {
            units_per_second,
            cadence: cadence.max(1),
            last_tick: 0,
            frames: 0,
            trajectories: 0,
            updates: 0,
            lag_seen: 0,
            workers: workers.into_iter().map(|w| (w, Busy::default())).collect(),
            sink: None,
            records: Vec::new(),
        }
    }

    /// Append every record to `path` as one JSON object per line.
    pub fn with_sink(mut self, path: &Path) -> std::io::Result<Self> {
        self.sink = Some(BufWriter::new(File::create(path)?));
        Ok(self)
    }

    pub fn cadence(&self) -> u64 {
        self.cadence
    }

    pub fn next_tick(&self) -> u64 {
        self.last_tick + self.cadence
    }

    pub fn add_frames(&mut self, n: u64) {
        self.frames += n;
    }

    pub fn add_trajectories(&mut self, n: u64) {
        self.trajectories += n;
    }

    pub fn add_update(&mut self) {
        self.updates += 1;
    }

    pub fn begin_busy(&mut self, worker: usize, now: u64) {
        let b = &mut self.workers[worker].1;
        if b.since.is_none() {
            b.since = Some(now);
        }
    }

    pub fn end_busy(&mut self, worker: usize, now: u64) {
        let b = &mut self.workers[worker].1;
        if let Some(s) = b.since.take() {
            b.total += now.saturating_sub(s);
        }
    }

    /// Close the window ending at `now` and emit a record.
    pub fn tick(&mut self, now: u64, queue_depth: u64, lag: &[LagRecord]) -> std::io::Result<()> {
        let span = now.saturating_sub(self.last_tick).max(1);
        let secs = span as f64 / self.units_per_second;
        let fresh = &lag[self.lag_seen.min(lag.len())..];
        let summary = lag_stats(fresh);
        self.lag_seen = lag.len();
        let mut busy_fraction = BTreeMap::new();
        for (name, b) in &mut self.workers {
            let upto = b.upto(now);
            busy_fraction.insert(name.clone(), ((upto - b.at_last_tick) as f64 / span as f64).min(1.0));
            b.at_last_tick = upto;
        }
        let record = MetricsRecord {
            timestamp: now as f64 / self.units_per_second,
            frames_per_second: self.frames as f64 / secs,
            trajectories_per_second: self.trajectories as f64 / secs,
            learner_updates_per_second: self.updates as f64 / secs,
            mean_lag: summary.mean,
            max_lag: summary.max.unwrap_or(0),
            queue_depth,
            busy_fraction,
        };
        self.frames = 0;
        self.trajectories = 0;
        self.updates = 0;
        self.last_tick = now;
        if let Some(sink) = &mut self.sink {
            serde_json::to_writer(&mut *sink, &record).map_err(std::io::Error::other)?;
            sink.write_all(b"\n")?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        if let Some(sink) = &mut self.sink {
            sink.flush()?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn into_records(mut self) -> std::io::Result<Vec<MetricsRecord>> {
        self.flush()?;
        Ok(self.records)
    }
}

/// End-of-run summary, printed as a table and written next to the metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub topology: String,
    pub env: String,
    pub seed: u64,
    pub clock: String,
    pub transport: String,
    /// Environment frames stepped by all actors.
    pub frames: u64,
    pub rollouts: u64,
    pub trajectories: u64,
    pub episodes: u64,
    pub mean_episode_return: f64,
    /// Learning-seat transitions reported by actors.
    pub samples_emitted: u64,
    pub samples_consumed: u64,
    pub samples_queued: u64,
    pub samples_dropped: u64,
    pub updates: u64,
    pub elapsed_seconds: f64,
    pub frames_per_second: f64,
    pub trajectories_per_second: f64,
    pub updates_per_second: f64,
    pub mean_lag: f64,
    pub max_lag: u64,
    pub final_version: u64,
    pub final_checksum: String,
    /// Intervals between consecutive publishes, in clock units.
    pub epoch_durations: Vec<u64>,
    pub league_generations: usize,
    pub league_matches: usize,
    pub inference_batches: u64,
    pub mean_inference_batch: f64,
    /// Hash of the simulated event schedule (empty on the wall clock).
    pub schedule_digest: String,
}

impl RunSummary {
    pub fn max_epoch(&self) -> Option<u64> {
        self.epoch_durations.iter().copied().max()
    }

    /// Emitted samples all accounted for.
    pub fn conserved(&self) -> bool {
        self.samples_emitted == self.samples_consumed + self.samples_queued + self.samples_dropped
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let epochs = match (self.epoch_durations.is_empty(), self.max_epoch()) {
            (false, Some(max)) => {
                let mean = self.epoch_durations.iter().sum::<u64>() as f64 / self.epoch_durations.len() as f64;
                format!("mean {mean:.2}, max {max}")
            }
            _ => "-".into(),
        };
        let rows: [(&str, String); 24] = [
            ("topology", self.topology.clone()),
            ("env", self.env.clone()),
            ("seed", self.seed.to_string()),
            ("clock / transport", format!("{} / {}", self.clock, self.transport)),
            ("frames", self.frames.to_string()),
            ("rollouts", self.rollouts.to_string()),
            ("trajectories", self.trajectories.to_string()),
            ("episodes", self.episodes.to_string()),
            ("mean episode return", format!("{:.4}", self.mean_episode_return)),
            ("samples emitted", self.samples_emitted.to_string()),
            (
                "samples consumed/queued/dropped",
                format!("{}/{}/{}", self.samples_consumed, self.samples_queued, self.samples_dropped),
            ),
            ("learner updates", self.updates.to_string()),
            ("elapsed seconds", format!("{:.3}", self.elapsed_seconds)),
            ("frames/sec", format!("{:.3}", self.frames_per_second)),
            ("trajectories/sec", format!("{:.3}", self.trajectories_per_second)),
            ("updates/sec", format!("{:.3}", self.updates_per_second)),
            ("lag mean/max", format!("{:.3}/{}", self.mean_lag, self.max_lag)),
            ("final version", self.final_version.to_string()),
            ("final checksum", self.final_checksum.clone()),
            ("epoch duration", epochs),
            (
                "league generations/matches",
                format!("{}/{}", self.league_generations, self.league_matches),
            ),
            ("inference batches", self.inference_batches.to_string()),
            ("mean inference batch", format!("{:.3}", self.mean_inference_batch)),
            ("schedule digest", self.schedule_digest.clone()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows {
            writeln!(f, "{k:<width$}  {v}")?;
        }
        Ok(())
    }
}
