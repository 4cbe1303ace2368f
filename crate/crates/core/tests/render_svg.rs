use driqn::harness::render_svg;
use driqn::world::{canonical_map, Outcome, TrajectoryRow, VesselState, Vec2};
use regex::Regex;

fn circles(svg: &str, class: &str) -> Vec<(f64, f64, f64)> {
    let re = Regex::new(&format!(r#"<circle class="{class}" cx="([^"]+)" cy="([^"]+)" r="([^"]+)""#)).unwrap();
    re.captures_iter(svg)
        .map(|c| (c[1].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap()))
        .collect()
}

#[test]
fn legend_only_document_without_episode() {
    let svg = render_svg(None);
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains(r#"class="legend""#));
    assert!(!svg.contains("<circle"));
    assert!(!svg.contains("<polyline"));
}

#[test]
fn emitted_geometry_round_trips_to_the_map() {
    let map = canonical_map();
    let svg = render_svg(Some((&map, &[])));
    let obstacles = circles(&svg, "obstacle");
    assert_eq!(obstacles.len(), map.obstacles.len());
    for (o, (x, y, r)) in map.obstacles.iter().zip(obstacles) {
        assert_eq!((o.center.x, o.center.y, o.radius), (x, y, r));
    }
    let vortices = circles(&svg, "vortex");
    for (v, (x, y, r)) in map.vortices.iter().zip(vortices) {
        assert_eq!((v.center.x, v.center.y, v.core_radius), (x, y, r));
    }
    assert_eq!(circles(&svg, "goal")[0].0, map.goal.x);
    assert_eq!(circles(&svg, "start")[0].1, map.start.y);
}

#[test]
fn straight_success_path_runs_from_start_to_goal() {
    let map = canonical_map();
    let rows: Vec<TrajectoryRow> = (0..=10)
        .map(|i| {
            let p = map.start + (map.goal - map.start) * (i as f64 / 10.0);
            let mut state = VesselState::at_rest(p, 0.0);
            state.step_count = i;
            let outcome = if i == 10 { Outcome::GoalReached } else { Outcome::Running };
            TrajectoryRow::new(&state, 0.1, 0.0, outcome)
        })
        .collect();
    let svg = render_svg(Some((&map, &rows)));
    let re = Regex::new(r#"<polyline class="path" data-outcome="goal" points="([^"]+)""#).unwrap();
    let points: Vec<Vec2> = re.captures(&svg).unwrap()[1]
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            Vec2::new(x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(points.len(), 11);
    assert_eq!(points[0], map.start);
    assert!((points[10] - map.goal).norm() < 1e-12);
}
