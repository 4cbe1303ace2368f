//! SVG plots of logged evaluation trajectories.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::{read_to_string, write_file, HarnessError};
use crate::world::{read_trajectory_csv, Outcome, TrajectoryRow, WorldMap};

/// Pixels per metre.
const SCALE: f64 = 12.0;
const LEGEND_HEIGHT: f64 = 40.0;
const LEGEND_WIDTH: f64 = 600.0;

fn outcome_color(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::GoalReached => "#2a9d4b",
        Outcome::Collision => "#d62828",
        Outcome::Timeout | Outcome::Running => "#e07b00",
    }
}

fn legend(out: &mut String, y: f64) {
    let items = [
        ("success", outcome_color(Outcome::GoalReached)),
        ("collision", outcome_color(Outcome::Collision)),
        ("timeout", outcome_color(Outcome::Timeout)),
        ("obstacle", "#555555"),
        ("vortex core", "#3a86ff"),
    ];
    writeln!(out, r#"<g class="legend" font-family="sans-serif" font-size="12">"#).unwrap();
    for (i, (label, color)) in items.iter().enumerate() {
        let x = 10.0 + 115.0 * i as f64;
        writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="14" fill="{color}"/><text x="{}" y="{}">{label}</text>"#,
            y + 13.0,
            x + 20.0,
            y + 25.0
        )
        .unwrap();
    }
    out.push_str("</g>\n");
}

/// One document with the map and path of an episode, or only the legend.
///
/// World geometry is emitted in metres inside a flipped group, so circle
/// centres and path points carry the map's own coordinates.
pub fn render_svg(episode: Option<(&WorldMap, &[TrajectoryRow])>) -> String {
    let mut out = String::new();
    let Some((map, path)) = episode else {
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{LEGEND_WIDTH}" height="{LEGEND_HEIGHT}">"#
        )
        .unwrap();
        legend(&mut out, 0.0);
        out.push_str("</svg>\n");
        return out;
    };
    let b = &map.bounds;
    let (w, h) = (b.width() * SCALE, b.height() * SCALE);
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">"#,
        w.max(LEGEND_WIDTH),
        h + LEGEND_HEIGHT
    )
    .unwrap();
    writeln!(
        out,
        r#"<g class="world" transform="translate({},{}) scale({SCALE},{})">"#,
        -b.min.x * SCALE,
        b.max.y * SCALE,
        -SCALE
    )
    .unwrap();
    writeln!(
        out,
        r##"<rect class="bounds" x="{}" y="{}" width="{}" height="{}" fill="#f4f8fb" stroke="#222222" stroke-width="0.1"/>"##,
        b.min.x,
        b.min.y,
        b.width(),
        b.height()
    )
    .unwrap();
    for v in &map.vortices {
        writeln!(
            out,
            r##"<circle class="vortex" cx="{}" cy="{}" r="{}" fill="none" stroke="#3a86ff" stroke-width="0.1" stroke-dasharray="0.4 0.3"/>"##,
            v.center.x, v.center.y, v.core_radius
        )
        .unwrap();
    }
    for o in &map.obstacles {
        writeln!(
            out,
            r##"<circle class="obstacle" cx="{}" cy="{}" r="{}" fill="#555555"/>"##,
            o.center.x, o.center.y, o.radius
        )
        .unwrap();
    }
    writeln!(
        out,
        r##"<circle class="start" cx="{}" cy="{}" r="0.5" fill="none" stroke="#222222" stroke-width="0.15"/>"##,
        map.start.x, map.start.y
    )
    .unwrap();
    writeln!(
        out,
        r##"<circle class="goal" cx="{}" cy="{}" r="0.5" fill="#ffd000" stroke="#222222" stroke-width="0.1"/>"##,
        map.goal.x, map.goal.y
    )
    .unwrap();
    if !path.is_empty() {
        let outcome = path.last().map_or(Outcome::Running, |r| r.outcome);
        let points: Vec<String> = path.iter().map(|r| format!("{},{}", r.x, r.y)).collect();
        writeln!(
            out,
            r#"<polyline class="path" data-outcome="{}" points="{}" fill="none" stroke="{}" stroke-width="0.15"/>"#,
            outcome.as_str(),
            points.join(" "),
            outcome_color(outcome)
        )
        .unwrap();
    }
    out.push_str("</g>\n");
    legend(&mut out, h);
    out.push_str("</svg>\n");
    out
}

/// Renders logged evaluation episodes of `run_dir` into `out_dir`, one file
/// per episode; missing episodes are skipped with a warning. An empty id
/// list yields a legend-only document.
pub fn render_run(run_dir: &Path, episodes: &[usize], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if episodes.is_empty() {
        let path = out_dir.join("legend.svg");
        write_file(&path, render_svg(None))?;
        return Ok(vec![path]);
    }
    let mut written = Vec::new();
    for &id in episodes {
        let map_path = run_dir.join("maps").join(format!("episode_{id}.json"));
        let traj_path = run_dir.join("trajectories").join(format!("episode_{id}.csv"));
        if !map_path.exists() || !traj_path.exists() {
            log::warn!("episode {id} has no logged trajectory in {}; skipped", run_dir.display());
            continue;
        }
        let map = WorldMap::from_json(&read_to_string(&map_path)?).map_err(|e| HarnessError::format(&map_path, e))?;
        let file = std::fs::File::open(&traj_path).map_err(|e| HarnessError::io(&traj_path, e))?;
        let rows = read_trajectory_csv(file).map_err(|e| HarnessError::format(&traj_path, e))?;
        let path = out_dir.join(format!("episode_{id}.svg"));
        write_file(&path, render_svg(Some((&map, &rows))))?;
        written.push(path);
    }
    Ok(written)
}
