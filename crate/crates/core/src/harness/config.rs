//! Run configuration document (TOML) with named scale profiles.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentKind, LearnerConfig};
use crate::baselines::{ApfConfig, BugConfig};
use crate::distrl::{LinearSchedule, Strategy};
use crate::noise::{build_catalog, CatalogEntry, NoiseConstants, NoiseKind, NoiseModel, NoiseSpec, ObservationRanges};
use crate::world::{LayoutConfig, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 50k steps, 3 seeds, evaluation every 5k steps.
    Desk,
    /// 1.5M steps, 9 seeds, evaluation every 10k steps.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the training steps over which epsilon anneals.
    pub anneal_fraction: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            anneal_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Total capacity, split evenly over subgroups.
    pub capacity: usize,
    pub min_fill: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            min_fill: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub agent: AgentKind,
    pub strategy: Strategy,
    /// Lower bound of the adaptive CVaR level.
    pub eta_min: f64,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// First seed of the frozen evaluation set.
    pub eval_seed: u64,
    pub randomize_layout: bool,
    /// Environment steps between learner updates.
    pub train_every: u64,
    /// Updates between dual-solution log lines; 0 disables the log.
    pub dro_log_interval: u64,
    /// Control-effort units per (m/s^2)^2 + (rad/s)^2 second.
    pub energy_scale: f64,
    pub noise: Vec<CatalogEntry>,
    pub noise_constants: NoiseConstants,
    pub sim: SimConfig,
    pub layout: LayoutConfig,
    pub learner: LearnerConfig,
    pub exploration: ExplorationConfig,
    pub replay: ReplayConfig,
    pub apf: ApfConfig,
    pub bug: BugConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (seeds, total_steps, eval_interval) = match profile {
            Profile::Desk => ((0..3).collect(), 50_000, 5_000),
            Profile::Full => ((0..9).collect(), 1_500_000, 10_000),
        };
        let learner = match profile {
            Profile::Desk => LearnerConfig {
                gamma: 0.95,
                target_sync: 250,
                ..LearnerConfig::default()
            },
            Profile::Full => LearnerConfig::default(),
        };
        Self {
            profile,
            agent: AgentKind::Driqn,
            strategy: Strategy::Greedy,
            eta_min: 0.25,
            seeds,
            total_steps,
            eval_interval,
            eval_episodes: 15,
            eval_seed: 1_000_000,
            randomize_layout: true,
            train_every: 1,
            dro_log_interval: 10,
            energy_scale: 100.0,
            noise: vec![
                CatalogEntry {
                    kind: NoiseKind::Gaussian,
                    intensity: 0.6,
                },
                CatalogEntry {
                    kind: NoiseKind::Poisson,
                    intensity: 0.6,
                },
            ],
            noise_constants: NoiseConstants::default(),
            sim: SimConfig::default(),
            layout: LayoutConfig::default(),
            learner,
            exploration: ExplorationConfig::default(),
            replay: ReplayConfig::default(),
            apf: ApfConfig::default(),
            bug: BugConfig::default(),
        }
    }

    /// Parses a TOML document; keys left out take the defaults of the
    /// document's `profile` (desk when absent).
    pub fn from_toml(doc: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = doc.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let profile = match user.get("profile") {
            None => Profile::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse(format!("profile: {e}")))?,
        };
        let base = toml::Table::try_from(Self::for_profile(profile)).expect("defaults serialize");
        let merged = merge(base, user);
        let config: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn catalog(&self) -> Result<Vec<NoiseSpec>, ConfigError> {
        build_catalog(&self.noise).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            constants: self.noise_constants,
            ranges: ObservationRanges::new(&self.sim, &self.layout),
        }
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval_episodes as u64).map(|i| self.eval_seed + i).collect()
    }

    pub fn epsilon(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.exploration.epsilon_start,
            end: self.exploration.epsilon_end,
            duration: (self.total_steps as f64 * self.exploration.anneal_fraction).round() as u64,
        }
    }

    pub fn lr_rest(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.learner.lr_start,
            end: self.learner.lr_end,
            duration: self.total_steps,
        }
    }

    pub fn lr_last(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.learner.lr_last_start,
            end: self.learner.lr_last_end,
            duration: self.total_steps,
        }
    }

    /// Short label of the noise catalog, e.g. `gaussian+poisson@0.6`.
    pub fn noise_label(&self) -> String {
        let kinds: Vec<&str> = self.noise.iter().map(|e| e.kind.as_str()).collect();
        let mut levels: Vec<String> = self.noise.iter().map(|e| e.intensity.to_string()).collect();
        levels.dedup();
        format!("{}@{}", kinds.join("+"), levels.join("/"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        self.catalog()?;
        let l = &self.learner;
        let s = &self.sim;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.total_steps == 0 || self.eval_interval == 0 || self.train_every == 0 {
            return bad("total_steps, eval_interval and train_every must be positive");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive");
        }
        if !(self.eta_min > 0.0 && self.eta_min <= 1.0) {
            return bad("eta_min must lie in (0, 1]");
        }
        if !(s.dt > 0.0 && s.v_max > 0.0 && s.sense_range > 0.0 && s.beams > 0 && s.max_steps > 0) {
            return bad("sim: dt, v_max, sense_range, beams and max_steps must be positive");
        }
        if !(0.0..1.0).contains(&l.gamma) {
            return bad("learner.gamma must lie in [0, 1)");
        }
        if l.n == 0 || l.n_next == 0 || l.k == 0 || l.batch_per_subgroup == 0 || l.hidden == 0 || l.n_cos == 0 {
            return bad("learner sample counts and widths must be positive");
        }
        if !(l.kappa > 0.0 && l.shrink_cap > 0.0) {
            return bad("learner.kappa and learner.shrink_cap must be positive");
        }
        if !(l.lr_start > 0.0 && l.lr_end > 0.0 && l.lr_last_start > 0.0 && l.lr_last_end > 0.0) {
            return bad("learning rates must be positive");
        }
        if l.target_sync == 0 || l.qp.max_iter == 0 || !(l.qp.tol > 0.0) {
            return bad("learner.target_sync, qp.max_iter and qp.tol must be positive");
        }
        if self.replay.capacity < self.noise.len() || self.replay.min_fill == 0 {
            return bad("replay capacity must cover every subgroup and min_fill must be positive");
        }
        let e = &self.exploration;
        if !((0.0..=1.0).contains(&e.epsilon_start) && (0.0..=1.0).contains(&e.epsilon_end) && (0.0..=1.0).contains(&e.anneal_fraction)) {
            return bad("exploration values must lie in [0, 1]");
        }
        Ok(())
    }
}

fn merge(mut base: toml::Table, user: toml::Table) -> toml::Table {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                let merged = merge(std::mem::take(b), u);
                *b = merged;
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
    base
}
