//! Cross-run summary tables.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::metrics::{read_metrics_csv, MetricsRecord};
use super::train::{RunInfo, METRICS_CSV};
use super::HarnessError;
use crate::agent::AgentKind;
use crate::distrl::Strategy;

/// Final evaluation of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub last: MetricsRecord,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let info = RunInfo::read(dir)?;
        let path = dir.join(METRICS_CSV);
        let last = read_metrics_csv(&path)?
            .pop()
            .ok_or_else(|| HarnessError::format(&path, "no evaluation recorded"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            last,
        })
    }
}

/// Relative change of `best` over `runner_up` in percent.
pub fn improvement(best: f64, runner_up: f64) -> Option<f64> {
    (runner_up != 0.0).then(|| (best - runner_up) / runner_up.abs() * 100.0)
}

struct Metric {
    name: &'static str,
    higher_is_better: bool,
    get: fn(&MetricsRecord) -> Option<f64>,
}

const METRICS: [Metric; 6] = [
    Metric {
        name: "SR",
        higher_is_better: true,
        get: |m| Some(m.sr),
    },
    Metric {
        name: "CR",
        higher_is_better: false,
        get: |m| Some(m.cr),
    },
    Metric {
        name: "TR",
        higher_is_better: false,
        get: |m| Some(m.tr),
    },
    Metric {
        name: "FCR",
        higher_is_better: true,
        get: |m| Some(m.fcr),
    },
    Metric {
        name: "AT",
        higher_is_better: false,
        get: |m| m.at,
    },
    Metric {
        name: "AE",
        higher_is_better: false,
        get: |m| m.ae,
    },
];

const AGENT_ORDER: [AgentKind; 6] = [
    AgentKind::Apf,
    AgentKind::Bug,
    AgentKind::Dqn,
    AgentKind::Iqn,
    AgentKind::Driqn,
    AgentKind::DriqnW,
];

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Markdown table per noise setting: mean ± sample std over seeds of each
/// agent's final evaluation, plus the best agent's change against the
/// runner-up when more than one agent is present.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<String, HarnessError> {
    let runs = dirs.iter().map(|d| RunSummary::load(d)).collect::<Result<Vec<_>, _>>()?;
    let Some(first) = runs.first() else {
        return Err(HarnessError::Mismatch("no runs to compare".into()));
    };
    for run in &runs[1..] {
        if run.info.eval_seeds != first.info.eval_seeds {
            return Err(HarnessError::Mismatch(format!(
                "{} and {} were evaluated on different seed sets; their metrics are not comparable",
                first.dir.display(),
                run.dir.display()
            )));
        }
    }

    type Group<'a> = BTreeMap<(usize, bool), Vec<&'a RunSummary>>;
    let mut by_noise: BTreeMap<&str, Group> = BTreeMap::new();
    for run in &runs {
        let rank = AGENT_ORDER.iter().position(|&k| k == run.info.agent).unwrap_or(AGENT_ORDER.len());
        let key = (rank, run.info.strategy == Strategy::Adaptive);
        by_noise.entry(&run.info.noise).or_default().entry(key).or_default().push(run);
    }

    let mut out = String::new();
    for (noise, groups) in &by_noise {
        writeln!(out, "## Noise: {noise}\n").unwrap();
        let names: Vec<&str> = METRICS.iter().map(|m| m.name).collect();
        writeln!(out, "| Agent | Seeds | {} |", names.join(" | ")).unwrap();
        writeln!(out, "|---|---|{}", "---|".repeat(METRICS.len())).unwrap();
        let mut means: Vec<(String, Vec<Option<f64>>)> = Vec::new();
        for runs in groups.values() {
            let info = &runs[0].info;
            let label = match info.strategy {
                Strategy::Greedy => info.agent.to_string(),
                Strategy::Adaptive => format!("{} (adaptive)", info.agent),
            };
            let mut cells = Vec::new();
            let mut row_means = Vec::new();
            for metric in &METRICS {
                let values: Vec<f64> = runs.iter().filter_map(|r| (metric.get)(&r.last)).collect();
                match mean_std(&values) {
                    Some((m, s)) => {
                        cells.push(format!("{m:.2} ± {s:.2}"));
                        row_means.push(Some(m));
                    }
                    None => {
                        cells.push("--".into());
                        row_means.push(None);
                    }
                }
            }
            writeln!(out, "| {label} | {} | {} |", runs.len(), cells.join(" | ")).unwrap();
            means.push((label, row_means));
        }
        if means.len() > 1 {
            let cells: Vec<String> = METRICS
                .iter()
                .enumerate()
                .map(|(i, metric)| {
                    let mut vals: Vec<f64> = means.iter().filter_map(|(_, m)| m[i]).collect();
                    vals.sort_by(|a, b| a.total_cmp(b));
                    if metric.higher_is_better {
                        vals.reverse();
                    }
                    match vals.as_slice() {
                        [best, runner_up, ..] => improvement(*best, *runner_up)
                            .map_or_else(|| "--".into(), |p| format!("{p:+.2}%")),
                        _ => "--".into(),
                    }
                })
                .collect();
            writeln!(out, "| Improvement | | {} |", cells.join(" | ")).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_matches_published_convention() {
        assert!((improvement(0.42, 0.37).unwrap() - 13.5135).abs() < 1e-3);
        assert!((improvement(0.50, 0.57).unwrap() + 12.2807).abs() < 1e-3);
        assert_eq!(improvement(0.3, 0.0), None);
    }

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), Some((4.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
