//! Deterministic 2-D marine environment.
//!
//! A unicycle vessel is advected by a superposition of Rankine vortices
//! while it steers among circular obstacles toward a goal. Everything here
//! is a pure function of its inputs; randomness enters only through the
//! seed handed to [`reset`].

mod dynamics;
mod io;
mod layout;
mod types;

pub use dynamics::{flow_velocity, ray_circle_distance, reward, sense, step};
pub use io::{read_trajectory_csv, write_trajectory_csv, TrajectoryRow};
pub use layout::{canonical_map, reset, LayoutError};
pub use types::{
    wrap_angle, ActionCommand, Bounds, Obstacle, Observation, Outcome, StepResult, Vec2,
    VesselState, Vortex, WorldMap, ACCELERATIONS, ACTION_COUNT, TURN_RATES,
};

use serde::{Deserialize, Serialize};

/// Reward constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub step: f64,
    pub collision: f64,
    pub goal: f64,
    /// Weight on the per-step reduction of goal distance.
    pub progress_gain: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step: -1.0,
            collision: -50.0,
            goal: 100.0,
            progress_gain: 1.0,
        }
    }
}

/// Vessel, sensor and episode constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step (s).
    pub dt: f64,
    /// Forward speed cap (m/s).
    pub v_max: f64,
    pub vessel_radius: f64,
    pub goal_radius: f64,
    /// LiDAR range (m).
    pub sense_range: f64,
    /// Number of LiDAR beams.
    pub beams: usize,
    /// Episode length cap in steps.
    pub max_steps: u32,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_max: 2.0,
            vessel_radius: 0.3,
            goal_radius: 0.5,
            sense_range: 10.0,
            beams: 64,
            max_steps: 1000,
            reward: RewardConfig::default(),
        }
    }
}

impl SimConfig {
    /// Length of the flat observation vector: velocity, goal and LiDAR.
    pub fn observation_dim(&self) -> usize {
        4 + self.beams
    }
}

/// Parameters of the randomized layout generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub width: f64,
    pub height: f64,
    pub obstacles: usize,
    pub vortices: usize,
    pub obstacle_radius: (f64, f64),
    pub core_radius: (f64, f64),
    /// Range of the peak tangential speed of a single vortex (m/s).
    pub vortex_speed: (f64, f64),
    pub start_goal_distance: (f64, f64),
    /// Obstacles and vortices are dispersed over a disc around the
    /// start-goal midpoint whose radius is half their separation plus this.
    pub area_margin: f64,
    /// Minimum distance of start and goal from the map edge.
    pub edge_margin: f64,
    /// Free water kept around start and goal beyond the obstacle surface (m).
    pub endpoint_clearance: f64,
    pub max_attempts: u32,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            width: 50.0,
            height: 50.0,
            obstacles: 6,
            vortices: 4,
            obstacle_radius: (1.0, 2.5),
            core_radius: (2.0, 4.0),
            vortex_speed: (0.3, 0.8),
            start_goal_distance: (12.0, 20.0),
            area_margin: 5.0,
            edge_margin: 5.0,
            endpoint_clearance: 2.0,
            max_attempts: 10_000,
        }
    }
}

impl LayoutConfig {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            min: Vec2::new(0.0, 0.0),
            max: Vec2::new(self.width, self.height),
        }
    }

    /// Upper bound on the flow speed induced by any one vortex.
    pub fn max_vortex_speed(&self) -> f64 {
        self.vortex_speed.1
    }
}
