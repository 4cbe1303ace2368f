use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::types::{Bounds, Obstacle, Vec2, VesselState, Vortex, WorldMap};
use super::{LayoutConfig, SimConfig};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("seed {seed}: no feasible layout after {attempts} attempts")]
    Infeasible { seed: u64, attempts: u32 },
}

/// Hand-authored 50 m x 50 m map with four vortices and six obstacles.
pub fn canonical_map() -> WorldMap {
    let obstacle = |x: f64, y: f64, radius: f64| Obstacle {
        center: Vec2::new(x, y),
        radius,
    };
    let vortex = |x: f64, y: f64, peak: f64, core_radius: f64| Vortex {
        center: Vec2::new(x, y),
        circulation: 2.0 * PI * core_radius * peak,
        core_radius,
    };
    WorldMap {
        bounds: Bounds {
            min: Vec2::new(0.0, 0.0),
            max: Vec2::new(50.0, 50.0),
        },
        obstacles: vec![
            obstacle(21.0, 20.0, 1.8),
            obstacle(26.5, 25.0, 2.0),
            obstacle(18.0, 26.0, 1.5),
            obstacle(30.0, 20.0, 1.6),
            obstacle(24.0, 31.0, 1.2),
            obstacle(35.0, 25.0, 1.4),
        ],
        vortices: vec![
            vortex(20.0, 24.0, 0.6, 3.0),
            vortex(28.0, 17.0, -0.5, 2.5),
            vortex(30.0, 33.0, 0.4, 3.5),
            vortex(14.0, 31.0, -0.7, 2.0),
        ],
        goal: Vec2::new(32.0, 30.0),
        start: Vec2::new(15.0, 15.0),
    }
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

fn point_in_disc(rng: &mut impl Rng, center: Vec2, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(-PI..PI);
    center + Vec2::new(r * a.cos(), r * a.sin())
}

/// Start and goal keep `goal_radius + max obstacle radius` from every obstacle
/// center and `endpoint_clearance` from every obstacle surface.
fn clearance_ok(map: &WorldMap, cfg: &LayoutConfig, sim: &SimConfig) -> bool {
    let base = sim.goal_radius + map.max_obstacle_radius();
    map.obstacles.iter().all(|o| {
        let clearance = base.max(o.radius + cfg.endpoint_clearance);
        (o.center - map.goal).norm() >= clearance && (o.center - map.start).norm() >= clearance
    })
}

fn sample_layout(rng: &mut ChaCha8Rng, cfg: &LayoutConfig, sim: &SimConfig) -> Option<WorldMap> {
    let bounds = cfg.bounds();
    let start = Vec2::new(
        uniform(rng, (cfg.edge_margin, cfg.width - cfg.edge_margin)),
        uniform(rng, (cfg.edge_margin, cfg.height - cfg.edge_margin)),
    );
    let dist = uniform(rng, cfg.start_goal_distance);
    let dir = rng.random_range(-PI..PI);
    let goal = start + Vec2::new(dist * dir.cos(), dist * dir.sin());
    if !bounds.contains(&goal, cfg.edge_margin) {
        return None;
    }

    let mid = (start + goal) * 0.5;
    let area = 0.5 * dist + cfg.area_margin;
    let mut obstacles = Vec::with_capacity(cfg.obstacles);
    for _ in 0..cfg.obstacles {
        let radius = uniform(rng, cfg.obstacle_radius);
        let center = point_in_disc(rng, mid, area);
        if !bounds.contains(&center, radius) {
            return None;
        }
        obstacles.push(Obstacle { center, radius });
    }
    let mut vortices = Vec::with_capacity(cfg.vortices);
    for _ in 0..cfg.vortices {
        let core_radius = uniform(rng, cfg.core_radius);
        let peak = uniform(rng, cfg.vortex_speed);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let center = point_in_disc(rng, mid, area);
        if !bounds.contains(&center, 0.0) {
            return None;
        }
        vortices.push(Vortex {
            center,
            circulation: sign * 2.0 * PI * core_radius * peak,
            core_radius,
        });
    }
    let map = WorldMap {
        bounds,
        obstacles,
        vortices,
        goal,
        start,
    };
    clearance_ok(&map, cfg, sim).then_some(map)
}

/// Seeded episode initialization.
///
/// With `randomize_layout` off the canonical map is used and only the
/// initial heading depends on the seed.
pub fn reset(
    seed: u64,
    randomize_layout: bool,
    layout: &LayoutConfig,
    sim: &SimConfig,
) -> Result<(VesselState, WorldMap), LayoutError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = if randomize_layout {
        let mut found = None;
        for _ in 0..layout.max_attempts {
            if let Some(map) = sample_layout(&mut rng, layout, sim) {
                found = Some(map);
                break;
            }
        }
        found.ok_or(LayoutError::Infeasible {
            seed,
            attempts: layout.max_attempts,
        })?
    } else {
        canonical_map()
    };
    let heading = rng.random_range(-PI..PI);
    Ok((VesselState::at_rest(map.start, heading), map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_layout() {
        let (layout, sim) = (LayoutConfig::default(), SimConfig::default());
        let a = reset(7, true, &layout, &sim).unwrap();
        let b = reset(7, true, &layout, &sim).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_give_distinct_goals() {
        let (layout, sim) = (LayoutConfig::default(), SimConfig::default());
        let goals: HashSet<(u64, u64)> = (0..100)
            .map(|s| {
                let (_, map) = reset(s, true, &layout, &sim).unwrap();
                (map.goal.x.to_bits(), map.goal.y.to_bits())
            })
            .collect();
        assert_eq!(goals.len(), 100);
        let g7 = reset(7, true, &layout, &sim).unwrap().1.goal;
        let g8 = reset(8, true, &layout, &sim).unwrap().1.goal;
        assert_ne!(g7, g8);
    }

    #[test]
    fn randomized_layouts_satisfy_invariants() {
        let (layout, sim) = (LayoutConfig::default(), SimConfig::default());
        for seed in 0..200 {
            let (state, map) = reset(seed, true, &layout, &sim).unwrap();
            assert_eq!(map.obstacles.len(), 4 + 2);
            assert_eq!(map.vortices.len(), 4);
            for o in &map.obstacles {
                for p in [map.start, map.goal] {
                    let d = (o.center - p).norm();
                    assert!(d >= sim.goal_radius + 2.5 && d - o.radius >= layout.endpoint_clearance);
                }
            }
            assert!(map.bounds.contains(&map.goal, 0.0) && map.bounds.contains(&map.start, 0.0));
            for o in &map.obstacles {
                assert!(map.bounds.contains(&o.center, o.radius));
            }
            let d = (map.goal - map.start).norm();
            assert!(d >= layout.start_goal_distance.0 && d <= layout.start_goal_distance.1);
            assert_eq!(state.position, map.start);
            assert_eq!(state.speed, 0.0);
            assert!(map.vortices.iter().all(|v| v.peak_speed() <= layout.max_vortex_speed() + 1e-12));
        }
    }

    #[test]
    fn fixed_layout_is_canonical() {
        let (layout, sim) = (LayoutConfig::default(), SimConfig::default());
        let (_, map) = reset(3, false, &layout, &sim).unwrap();
        assert_eq!(map, canonical_map());
        assert_eq!(map.vortices.len(), 4);
        assert_eq!(map.obstacles.len(), 6);
        assert!(clearance_ok(&map, &layout, &sim));
    }

    #[test]
    fn infeasible_layout_names_seed() {
        let layout = LayoutConfig {
            start_goal_distance: (200.0, 300.0),
            max_attempts: 50,
            ..LayoutConfig::default()
        };
        let err = reset(42, true, &layout, &SimConfig::default()).unwrap_err();
        assert!(err.to_string().contains("seed 42"));
    }
}
