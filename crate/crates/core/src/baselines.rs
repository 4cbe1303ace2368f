//! Classical reactive planners driven by the same observations as the
//! learned agents.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::world::{ActionCommand, Observation, Vec2, TURN_RATES};

const ACCEL_UP: usize = 2;
const ACCEL_HOLD: usize = 1;
const ACCEL_DOWN: usize = 0;

fn beam_bearing(k: usize, beams: usize) -> f64 {
    2.0 * PI * k as f64 / beams as f64
}

/// Turn-rate column whose one-step rotation best cancels `error`.
fn turn_toward(error: f64, dt: f64) -> usize {
    let mut best = 1;
    let mut best_err = error.abs();
    for (col, w) in TURN_RATES.iter().enumerate() {
        let e = (error - w * dt).abs();
        if e < best_err {
            best = col;
            best_err = e;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfConfig {
    pub k_att: f64,
    pub k_rep: f64,
    /// Influence radius as a fraction of the LiDAR range.
    pub influence: f64,
    /// Heading error below which the planner accelerates.
    pub align_tolerance: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self {
            k_att: 1.0,
            k_rep: 0.5,
            influence: 0.5,
            align_tolerance: PI / 6.0,
        }
    }
}

/// Resultant of goal attraction and beam repulsion, in the vessel frame.
pub fn apf_force(obs: &Observation, cfg: &ApfConfig, sense_range: f64) -> Vec2 {
    let goal = obs.goal_rel;
    let mut force = if goal.norm() > 0.0 {
        goal / goal.norm() * cfg.k_att
    } else {
        Vec2::zeros()
    };
    let r0 = cfg.influence * sense_range;
    let beams = obs.lidar.len();
    for (k, &reading) in obs.lidar.iter().enumerate() {
        let r = (reading * sense_range).max(1e-3);
        if r < r0 {
            let magnitude = cfg.k_rep * (1.0 / r - 1.0 / r0) / (r * r);
            let b = beam_bearing(k, beams);
            force -= Vec2::new(b.cos(), b.sin()) * magnitude;
        }
    }
    force
}

pub fn apf_action(obs: &Observation, cfg: &ApfConfig, sense_range: f64, dt: f64) -> ActionCommand {
    let force = apf_force(obs, cfg, sense_range);
    if force.norm() == 0.0 {
        return ActionCommand::from_parts(ACCEL_HOLD, 1);
    }
    let error = force.y.atan2(force.x);
    let accel = if error.abs() < cfg.align_tolerance { ACCEL_UP } else { ACCEL_DOWN };
    ActionCommand::from_parts(accel, turn_toward(error, dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BugConfig {
    /// Boundary following starts below this fraction of the LiDAR range.
    pub trigger: f64,
    /// Readings along the goal bearing that count as a clear path.
    pub clear: f64,
    /// Half-width of the goal-bearing cone checked before leaving.
    pub clear_cone: f64,
    /// Side distance held while following, as a fraction of the range.
    pub follow_range: f64,
    /// Cruise speed toward the goal (m/s).
    pub cruise: f64,
    /// Speed while following a boundary (m/s).
    pub follow_speed: f64,
}

impl Default for BugConfig {
    fn default() -> Self {
        Self {
            trigger: 0.15,
            clear: 0.5,
            clear_cone: PI / 8.0,
            follow_range: 0.15,
            cruise: 1.0,
            follow_speed: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BugMode {
    MotionToGoal,
    BoundaryFollow,
}

/// Which side of the vessel the followed boundary is kept on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FollowSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BugState {
    pub mode: BugMode,
    /// Goal distance when the boundary was hit.
    pub hit_distance: f64,
    pub side: FollowSide,
}

impl Default for BugState {
    fn default() -> Self {
        Self {
            mode: BugMode::MotionToGoal,
            hit_distance: f64::INFINITY,
            side: FollowSide::Left,
        }
    }
}

fn signed_bearing(k: usize, beams: usize) -> f64 {
    crate::world::wrap_angle(beam_bearing(k, beams))
}

fn speed_column(obs: &Observation, cruise: f64) -> usize {
    let v = obs.velocity.norm();
    if v < 0.9 * cruise {
        ACCEL_UP
    } else if v > 1.1 * cruise {
        ACCEL_DOWN
    } else {
        ACCEL_HOLD
    }
}

fn goal_path_clear(obs: &Observation, cfg: &BugConfig, goal_bearing: f64) -> bool {
    let beams = obs.lidar.len();
    obs.lidar.iter().enumerate().all(|(k, &r)| {
        let off = crate::world::wrap_angle(signed_bearing(k, beams) - goal_bearing);
        off.abs() > cfg.clear_cone || r >= cfg.clear
    })
}

/// Bug2-style planner step.
pub fn bug_action(obs: &Observation, state: BugState, cfg: &BugConfig, dt: f64) -> (ActionCommand, BugState) {
    let beams = obs.lidar.len();
    let goal_bearing = obs.goal_rel.y.atan2(obs.goal_rel.x);
    let goal_dist = obs.goal_rel.norm();
    let mut next = state;

    match state.mode {
        BugMode::MotionToGoal => {
            if obs.min_lidar() < cfg.trigger {
                let nearest = (0..beams).min_by(|&a, &b| obs.lidar[a].total_cmp(&obs.lidar[b])).unwrap_or(0);
                next = BugState {
                    mode: BugMode::BoundaryFollow,
                    hit_distance: goal_dist,
                    side: if signed_bearing(nearest, beams) >= 0.0 {
                        FollowSide::Left
                    } else {
                        FollowSide::Right
                    },
                };
            }
        }
        BugMode::BoundaryFollow => {
            if goal_path_clear(obs, cfg, goal_bearing) && goal_dist < state.hit_distance {
                next.mode = BugMode::MotionToGoal;
            }
        }
    }

    let cmd = match next.mode {
        BugMode::MotionToGoal => ActionCommand::from_parts(speed_column(obs, cfg.cruise), turn_toward(goal_bearing, dt)),
        BugMode::BoundaryFollow => {
            let accel = speed_column(obs, cfg.follow_speed);
            // Nearest return on the followed side, front sector included.
            let side_sign = if next.side == FollowSide::Left { 1.0 } else { -1.0 };
            let side_min = (0..beams)
                .filter(|&k| {
                    let b = signed_bearing(k, beams) * side_sign;
                    (-PI / 4.0..=PI).contains(&b)
                })
                .map(|k| obs.lidar[k])
                .fold(1.0, f64::min);
            // Too close: turn away from the boundary; too far: turn toward it.
            let toward = if side_min > cfg.follow_range { side_sign } else { -side_sign };
            let col = if toward > 0.0 { 2 } else { 0 };
            ActionCommand::from_parts(accel, col)
        }
    };
    (cmd, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        sense, step, Bounds, Obstacle, Outcome, SimConfig, VesselState, WorldMap,
    };

    fn open_obs(goal: Vec2) -> Observation {
        Observation {
            velocity: Vec2::zeros(),
            goal_rel: goal,
            lidar: vec![1.0; 64],
        }
    }

    #[test]
    fn apf_open_water_accelerates_straight() {
        let cmd = apf_action(&open_obs(Vec2::new(10.0, 0.0)), &ApfConfig::default(), 10.0, 0.1);
        assert_eq!((cmd.accel, cmd.turn_rate), (0.4, 0.0));
    }

    #[test]
    fn apf_symmetric_obstacles_cancel() {
        let mut o = open_obs(Vec2::new(10.0, 0.0));
        o.lidar[16] = 0.2;
        o.lidar[48] = 0.2;
        let f = apf_force(&o, &ApfConfig::default(), 10.0);
        assert!(f.y.abs() < 1e-12);
        assert_eq!(apf_action(&o, &ApfConfig::default(), 10.0, 0.1).turn_rate, 0.0);
    }

    #[test]
    fn apf_turns_away_from_obstacle_ahead() {
        let cfg = ApfConfig::default();
        let mut o = open_obs(Vec2::new(12.0, 0.0));
        // Obstacle ahead, slightly to the left: beams 0, 1 and 63.
        o.lidar[0] = 0.1;
        o.lidar[1] = 0.08;
        o.lidar[63] = 0.12;
        // Force sum evaluated by hand with explicit loops.
        let (mut fx, mut fy) = (1.0, 0.0);
        for (k, &r) in o.lidar.iter().enumerate() {
            let d = r * 10.0;
            if d < 5.0 {
                let m = 0.5 * (1.0 / d - 1.0 / 5.0) / (d * d);
                let b = 2.0 * PI * k as f64 / 64.0;
                fx -= m * b.cos();
                fy -= m * b.sin();
            }
        }
        let expected_sign = fy.atan2(fx).signum();
        let cmd = apf_action(&o, &cfg, 10.0, 0.1);
        assert_ne!(cmd.turn_rate, 0.0);
        assert_eq!(cmd.turn_rate.signum(), expected_sign);
        assert_eq!(expected_sign, -1.0);
    }

    #[test]
    fn apf_zero_force_holds() {
        let mut o = open_obs(Vec2::zeros());
        o.lidar = vec![1.0; 8];
        let cmd = apf_action(&o, &ApfConfig::default(), 10.0, 0.1);
        assert_eq!((cmd.accel, cmd.turn_rate), (0.0, 0.0));
    }

    #[test]
    fn bug_open_water_stays_on_goal() {
        let (cmd, s) = bug_action(&open_obs(Vec2::new(5.0, 5.0)), BugState::default(), &BugConfig::default(), 0.1);
        assert_eq!(s.mode, BugMode::MotionToGoal);
        assert_eq!(cmd.turn_rate, 0.52);
    }

    #[test]
    fn bug_wall_ahead_switches_mode() {
        let mut o = open_obs(Vec2::new(10.0, 0.0));
        o.lidar[0] = 0.149;
        let (_, s) = bug_action(&o, BugState::default(), &BugConfig::default(), 0.1);
        assert_eq!(s.mode, BugMode::BoundaryFollow);
        assert_eq!(s.hit_distance, 10.0);
    }

    #[test]
    fn planners_are_pure() {
        let mut o = open_obs(Vec2::new(4.0, -3.0));
        o.lidar[5] = 0.3;
        o.lidar[60] = 0.1;
        let s = BugState::default();
        assert_eq!(bug_action(&o, s, &BugConfig::default(), 0.1), bug_action(&o, s, &BugConfig::default(), 0.1));
        assert_eq!(
            apf_action(&o, &ApfConfig::default(), 10.0, 0.1),
            apf_action(&o, &ApfConfig::default(), 10.0, 0.1)
        );
    }

    #[test]
    fn bug_passes_single_obstacle() {
        let sim = SimConfig::default();
        let map = WorldMap {
            bounds: Bounds {
                min: Vec2::new(0.0, 0.0),
                max: Vec2::new(50.0, 50.0),
            },
            obstacles: vec![Obstacle {
                center: Vec2::new(25.0, 25.2),
                radius: 2.0,
            }],
            vortices: vec![],
            goal: Vec2::new(35.0, 25.0),
            start: Vec2::new(15.0, 25.0),
        };
        let mut state = VesselState::at_rest(map.start, 0.0);
        let mut bug = BugState::default();
        let mut closest = f64::INFINITY;
        let mut followed = false;
        let outcome = loop {
            let obs = sense(&state, &map, &sim);
            let (cmd, next) = bug_action(&obs, bug, &BugConfig::default(), sim.dt);
            followed |= next.mode == BugMode::BoundaryFollow;
            bug = next;
            let r = step(&state, cmd, &map, &sim);
            state = r.next_state;
            let o = &map.obstacles[0];
            closest = closest.min((state.position - o.center).norm() - o.radius);
            if r.outcome != Outcome::Running {
                break r.outcome;
            }
        };
        assert_eq!(outcome, Outcome::GoalReached, "{state:?} closest {closest}");
        assert!(followed);
        assert!(closest >= sim.vessel_radius, "closest approach {closest}");
    }
}
