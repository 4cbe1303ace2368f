use std::f64::consts::PI;

use super::types::{
    wrap_angle, ActionCommand, Observation, Outcome, StepResult, Vec2, VesselState, WorldMap,
};
use super::{RewardConfig, SimConfig};

/// Superposed Rankine vortex field at `p` (m/s).
pub fn flow_velocity(map: &WorldMap, p: &Vec2) -> Vec2 {
    let mut flow = Vec2::zeros();
    for vortex in &map.vortices {
        let rel = p - vortex.center;
        let r = rel.norm();
        if r == 0.0 {
            continue;
        }
        let speed = if r < vortex.core_radius {
            vortex.circulation * r / (2.0 * PI * vortex.core_radius * vortex.core_radius)
        } else {
            vortex.circulation / (2.0 * PI * r)
        };
        flow += Vec2::new(-rel.y, rel.x) * (speed / r);
    }
    flow
}

/// Step reward: step cost, progress shaping and the terminal bonus of `outcome`.
pub fn reward(prev_goal_dist: f64, goal_dist: f64, outcome: Outcome, cfg: &RewardConfig) -> f64 {
    let bonus = match outcome {
        Outcome::Collision => cfg.collision,
        Outcome::GoalReached => cfg.goal,
        Outcome::Running | Outcome::Timeout => 0.0,
    };
    cfg.step + cfg.progress_gain * (prev_goal_dist - goal_dist) + bonus
}

/// Advances the vessel by one forward-Euler step.
///
/// When several events coincide the outcome is resolved as
/// collision, then goal, then timeout.
pub fn step(state: &VesselState, cmd: ActionCommand, map: &WorldMap, sim: &SimConfig) -> StepResult {
    let dt = sim.dt;
    let (sin, cos) = state.heading.sin_cos();
    let velocity = Vec2::new(cos, sin) * state.speed + flow_velocity(map, &state.position);
    let position = state.position + velocity * dt;
    let next_state = VesselState {
        position,
        heading: wrap_angle(state.heading + cmd.turn_rate * dt),
        speed: (state.speed + cmd.accel * dt).clamp(0.0, sim.v_max),
        step_count: state.step_count + 1,
    };

    let prev_dist = (state.position - map.goal).norm();
    let dist = (position - map.goal).norm();
    let collided = map
        .obstacles
        .iter()
        .any(|o| (position - o.center).norm() < o.radius + sim.vessel_radius);
    let outcome = if collided {
        Outcome::Collision
    } else if dist < sim.goal_radius {
        Outcome::GoalReached
    } else if state.step_count + 1 >= sim.max_steps {
        Outcome::Timeout
    } else {
        Outcome::Running
    };

    StepResult {
        next_state,
        reward: reward(prev_dist, dist, outcome, &sim.reward),
        outcome,
    }
}

/// Distance along a unit ray to the first intersection with a circle.
///
/// Returns `Some(0.0)` when the origin lies inside the circle.
pub fn ray_circle_distance(origin: &Vec2, dir: &Vec2, center: &Vec2, radius: f64) -> Option<f64> {
    let rel = origin - center;
    let c = rel.norm_squared() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = dir.dot(&rel);
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    // c > 0 means both roots share a sign; the near one is -b - sqrt(disc).
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Builds the clean observation of `state`.
pub fn sense(state: &VesselState, map: &WorldMap, sim: &SimConfig) -> Observation {
    let beams = sim.beams;
    let lidar = (0..beams)
        .map(|k| {
            let bearing = state.heading + 2.0 * PI * k as f64 / beams as f64;
            let dir = Vec2::new(bearing.cos(), bearing.sin());
            let hit = map
                .obstacles
                .iter()
                .filter_map(|o| ray_circle_distance(&state.position, &dir, &o.center, o.radius))
                .fold(sim.sense_range, f64::min);
            hit.min(sim.sense_range) / sim.sense_range
        })
        .collect();

    let (sin, cos) = state.heading.sin_cos();
    let to_goal = map.goal - state.position;
    // Rotation by -heading.
    let goal_rel = Vec2::new(cos * to_goal.x + sin * to_goal.y, -sin * to_goal.x + cos * to_goal.y);
    let velocity = Vec2::new(cos, sin) * state.speed + flow_velocity(map, &state.position);

    Observation {
        velocity,
        goal_rel,
        lidar,
    }
}
