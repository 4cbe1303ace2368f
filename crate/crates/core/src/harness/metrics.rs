//! The six evaluation metrics and their CSV logs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::EpisodeLog;
use super::HarnessError;
use crate::world::Outcome;

/// One evaluation round. `at`/`ae` are absent without successes; the
/// learner columns are absent when no update contributed to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "TR")]
    pub tr: f64,
    #[serde(rename = "FCR")]
    pub fcr: f64,
    #[serde(rename = "AT")]
    pub at: Option<f64>,
    #[serde(rename = "AE")]
    pub ae: Option<f64>,
    pub mean_lambda_entropy: Option<f64>,
    pub grad_norm: Option<f64>,
}

/// Outcome counts of an evaluation round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub goal: usize,
    pub collision: usize,
    pub timeout: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.goal + self.collision + self.timeout
    }
}

impl MetricsRecord {
    /// Frequencies and success-conditioned averages of `episodes`.
    pub fn from_episodes(step: u64, episodes: &[EpisodeLog], dt: f64) -> Self {
        let counts = count_outcomes(episodes.iter().map(|e| e.outcome));
        let n = episodes.len().max(1) as f64;
        let successes: Vec<&EpisodeLog> = episodes.iter().filter(|e| e.outcome == Outcome::GoalReached).collect();
        let mean = |f: &dyn Fn(&EpisodeLog) -> f64| -> Option<f64> {
            (!successes.is_empty()).then(|| successes.iter().map(|e| f(e)).sum::<f64>() / successes.len() as f64)
        };
        Self {
            step,
            sr: counts.goal as f64 / n,
            cr: counts.collision as f64 / n,
            tr: counts.timeout as f64 / n,
            fcr: episodes.iter().map(|e| e.total_reward).sum::<f64>() / n,
            at: mean(&|e| e.steps as f64 * dt),
            ae: mean(&|e| e.energy),
            mean_lambda_entropy: None,
            grad_norm: None,
        }
    }
}

/// Tallies terminal outcomes; a still-running episode counts as a timeout.
pub fn count_outcomes(outcomes: impl IntoIterator<Item = Outcome>) -> OutcomeCounts {
    let mut c = OutcomeCounts::default();
    for o in outcomes {
        match o {
            Outcome::GoalReached => c.goal += 1,
            Outcome::Collision => c.collision += 1,
            Outcome::Timeout | Outcome::Running => c.timeout += 1,
        }
    }
    c
}

/// Per-episode line of `evals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisodeRow {
    pub step: u64,
    pub episode: usize,
    pub seed: u64,
    pub subgroup: usize,
    pub outcome: String,
    pub steps: u32,
    pub total_reward: f64,
    pub energy: f64,
}

impl EvalEpisodeRow {
    pub fn new(step: u64, episode: usize, log: &EpisodeLog) -> Self {
        Self {
            step,
            episode,
            seed: log.seed,
            subgroup: log.subgroup_id,
            outcome: log.outcome.as_str().to_string(),
            steps: log.steps,
            total_reward: log.total_reward,
            energy: log.energy,
        }
    }
}

/// Appends `rows` to a CSV file, writing the header only when the file is new.
pub(crate) fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        writer.serialize(row).map_err(|e| HarnessError::format(path, e))?;
    }
    writer.flush().map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::format(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::canonical_map;

    fn episode(outcome: Outcome, steps: u32, total_reward: f64, energy: f64) -> EpisodeLog {
        EpisodeLog {
            seed: 0,
            subgroup_id: 0,
            outcome,
            steps,
            total_reward,
            energy,
            map: canonical_map(),
            trajectory: Vec::new(),
        }
    }

    #[test]
    fn frequencies_of_mixed_outcomes() {
        let eps = [
            episode(Outcome::GoalReached, 100, 50.0, 10.0),
            episode(Outcome::GoalReached, 300, 30.0, 30.0),
            episode(Outcome::Collision, 20, -60.0, 1.0),
            episode(Outcome::Timeout, 1000, -200.0, 5.0),
        ];
        let m = MetricsRecord::from_episodes(5000, &eps, 0.1);
        assert_eq!((m.sr, m.cr, m.tr), (0.5, 0.25, 0.25));
        assert_eq!(m.fcr, (50.0 + 30.0 - 60.0 - 200.0) / 4.0);
        assert_eq!(m.at, Some(20.0));
        assert_eq!(m.ae, Some(20.0));
    }

    #[test]
    fn no_success_leaves_time_and_energy_absent() {
        let eps = [episode(Outcome::Collision, 5, -51.0, 0.0)];
        let m = MetricsRecord::from_episodes(0, &eps, 0.1);
        assert_eq!(m.at, None);
        assert_eq!(m.ae, None);
        assert_eq!(m.cr, 1.0);
    }

    #[test]
    fn csv_round_trip_with_absent_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRecord {
                step: 5,
                sr: 0.2,
                cr: 0.8,
                tr: 0.0,
                fcr: -1.5,
                at: None,
                ae: Some(3.25),
                mean_lambda_entropy: None,
                grad_norm: Some(0.1),
            },
            MetricsRecord::from_episodes(10, &[episode(Outcome::Timeout, 3, 1.0, 0.0)], 0.1),
        ];
        append_csv(&path, &rows[..1]).unwrap();
        append_csv(&path, &rows[1..]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,SR,CR,TR,FCR,AT,AE,mean_lambda_entropy,grad_norm");
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }
}
