use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Axis-aligned rectangle (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// True if `p` lies inside the rectangle shrunk by `margin` on every side.
    pub fn contains(&self, p: &Vec2, margin: f64) -> bool {
        p.x >= self.min.x + margin
            && p.x <= self.max.x - margin
            && p.y >= self.min.y + margin
            && p.y <= self.max.y - margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

/// Rankine vortex: solid-body rotation inside the core, 1/r decay outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vortex {
    pub center: Vec2,
    /// Circulation (m^2/s); positive spins counterclockwise.
    pub circulation: f64,
    pub core_radius: f64,
}

impl Vortex {
    /// Tangential speed at the core boundary, the maximum of the profile.
    pub fn peak_speed(&self) -> f64 {
        self.circulation.abs() / (2.0 * PI * self.core_radius)
    }
}

/// Static geometry of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
    pub vortices: Vec<Vortex>,
    pub goal: Vec2,
    pub start: Vec2,
}

impl WorldMap {
    pub fn max_obstacle_radius(&self) -> f64 {
        self.obstacles.iter().map(|o| o.radius).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesselState {
    pub position: Vec2,
    /// Heading in (-pi, pi].
    pub heading: f64,
    /// Forward speed in [0, v_max].
    pub speed: f64,
    pub step_count: u32,
}

impl VesselState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            speed: 0.0,
            step_count: 0,
        }
    }
}

/// What the vessel perceives: seafloor-relative velocity, the goal in the
/// vessel frame and normalized LiDAR ranges (1.0 = no return).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub velocity: Vec2,
    pub goal_rel: Vec2,
    pub lidar: Vec<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        4 + self.lidar.len()
    }

    pub fn min_lidar(&self) -> f64 {
        self.lidar.iter().copied().fold(1.0, f64::min)
    }
}

pub const ACCELERATIONS: [f64; 3] = [-0.4, 0.0, 0.4];
pub const TURN_RATES: [f64; 3] = [-0.52, 0.0, 0.52];
pub const ACTION_COUNT: usize = ACCELERATIONS.len() * TURN_RATES.len();

/// One of the nine discrete (acceleration, turn rate) commands.
///
/// `index = 3 * row(accel) + col(turn_rate)` with rows and columns in the
/// order of [`ACCELERATIONS`] and [`TURN_RATES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub index: usize,
    /// m/s^2
    pub accel: f64,
    /// rad/s
    pub turn_rate: f64,
}

impl ActionCommand {
    /// Panics if `index >= ACTION_COUNT`.
    pub fn from_index(index: usize) -> Self {
        assert!(index < ACTION_COUNT, "action index {index} out of range");
        let (row, col) = (index / TURN_RATES.len(), index % TURN_RATES.len());
        Self {
            index,
            accel: ACCELERATIONS[row],
            turn_rate: TURN_RATES[col],
        }
    }

    pub fn from_parts(accel_row: usize, turn_col: usize) -> Self {
        Self::from_index(accel_row * TURN_RATES.len() + turn_col)
    }

    pub fn all() -> impl Iterator<Item = ActionCommand> {
        (0..ACTION_COUNT).map(Self::from_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Running,
    Collision,
    GoalReached,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Collision => "collision",
            Outcome::GoalReached => "goal",
            Outcome::Timeout => "timeout",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "running" => Ok(Outcome::Running),
            "collision" => Ok(Outcome::Collision),
            "goal" => Ok(Outcome::GoalReached),
            "timeout" => Ok(Outcome::Timeout),
            other => Err(format!("unknown outcome '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: VesselState,
    pub reward: f64,
    pub outcome: Outcome,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_index_bijection() {
        for (row, a) in ACCELERATIONS.iter().enumerate() {
            for (col, w) in TURN_RATES.iter().enumerate() {
                let cmd = ActionCommand::from_parts(row, col);
                assert_eq!(cmd.index, 3 * row + col);
                assert_eq!((cmd.accel, cmd.turn_rate), (*a, *w));
            }
        }
        assert_eq!(ActionCommand::all().count(), 9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
        for k in -50..50 {
            let a = wrap_angle(k as f64 * 0.37);
            assert!(a > -PI && a <= PI);
        }
    }
}
