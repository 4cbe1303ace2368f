//! Frozen-seed evaluation of learned and classical policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::HarnessError;
use crate::agent::AgentKind;
use crate::baselines::{apf_action, bug_action, ApfConfig, BugConfig, BugState};
use crate::distrl::{select_action, Strategy};
use crate::noise::{assign_subgroup, NoiseModel, NoiseSpec};
use crate::qnet::{load_checkpoint, Network};
use crate::world::{reset, sense, step, ActionCommand, Observation, Outcome, SimConfig, TrajectoryRow, WorldMap};

#[derive(Debug, Clone)]
pub enum Policy {
    Apf(ApfConfig),
    Bug(BugConfig),
    Learned {
        net: Network,
        strategy: Strategy,
        eta_min: f64,
        /// Quantile samples per action-value estimate.
        k: usize,
    },
}

impl Policy {
    /// Baseline policy of `cfg.agent`, or `None` for learning agents.
    pub fn baseline(cfg: &RunConfig) -> Option<Self> {
        match cfg.agent {
            AgentKind::Apf => Some(Policy::Apf(cfg.apf)),
            AgentKind::Bug => Some(Policy::Bug(cfg.bug)),
            _ => None,
        }
    }

    pub fn learned(net: Network, cfg: &RunConfig) -> Self {
        Policy::Learned {
            net,
            strategy: cfg.strategy,
            eta_min: cfg.eta_min,
            k: cfg.learner.k,
        }
    }

    /// Action for `obs`; `bug` carries the Bug planner's memory.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        bug: &mut BugState,
        sim: &SimConfig,
        rng: &mut R,
    ) -> Result<ActionCommand, HarnessError> {
        Ok(match self {
            Policy::Apf(cfg) => apf_action(obs, cfg, sim.sense_range, sim.dt),
            Policy::Bug(cfg) => {
                let (cmd, next) = bug_action(obs, *bug, cfg, sim.dt);
                *bug = next;
                cmd
            }
            Policy::Learned {
                net,
                strategy,
                eta_min,
                k,
            } => {
                let spec = strategy.distortion(obs, *eta_min);
                ActionCommand::from_index(select_action(net, obs, *k, spec, rng)?)
            }
        })
    }
}

/// Everything logged about one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub subgroup_id: usize,
    pub outcome: Outcome,
    pub steps: u32,
    pub total_reward: f64,
    /// Control effort: sum of `(a^2 + w^2) dt`, times the energy scale.
    pub energy: f64,
    pub map: WorldMap,
    /// Initial pose followed by one row per step.
    pub trajectory: Vec<TrajectoryRow>,
}

/// Runs one episode whose layout, noise subgroup, perturbations and
/// quantile draws all derive from `seed` alone.
pub fn run_eval_episode(
    policy: &Policy,
    cfg: &RunConfig,
    catalog: &[NoiseSpec],
    model: &NoiseModel,
    seed: u64,
) -> Result<EpisodeLog, HarnessError> {
    let sim = &cfg.sim;
    let (mut state, map) = reset(seed, cfg.randomize_layout, &cfg.layout, sim)?;
    // A separate stream keeps these draws independent of the layout sampler.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let spec = assign_subgroup(&mut rng, catalog).map_err(|e| super::ConfigError::Invalid(e.to_string()))?;
    let mut bug = BugState::default();
    let mut trajectory = vec![TrajectoryRow::new(&state, sim.dt, 0.0, Outcome::Running)];
    let (mut total_reward, mut effort) = (0.0, 0.0);
    loop {
        let obs = model.perturb(&sense(&state, &map, sim), &spec, &mut rng);
        let cmd = policy.act(&obs, &mut bug, sim, &mut rng)?;
        let result = step(&state, cmd, &map, sim);
        total_reward += result.reward;
        effort += (cmd.accel * cmd.accel + cmd.turn_rate * cmd.turn_rate) * sim.dt;
        state = result.next_state;
        trajectory.push(TrajectoryRow::new(&state, sim.dt, result.reward, result.outcome));
        if result.outcome.is_terminal() {
            return Ok(EpisodeLog {
                seed,
                subgroup_id: spec.subgroup_id,
                outcome: result.outcome,
                steps: state.step_count,
                total_reward,
                energy: effort * cfg.energy_scale,
                map,
                trajectory,
            });
        }
    }
}

/// Evaluates `policy` on every seed, in seed order.
pub fn evaluate(policy: &Policy, cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<EpisodeLog>, HarnessError> {
    let catalog = cfg.catalog()?;
    let model = cfg.noise_model();
    seeds
        .iter()
        .map(|&seed| run_eval_episode(policy, cfg, &catalog, &model, seed))
        .collect()
}

/// Rebuilds the policy and run configuration stored in a checkpoint.
/// `strategy` overrides the configured action-selection strategy.
pub fn load_policy(doc: &[u8], strategy: Option<Strategy>) -> Result<(Policy, RunConfig), HarnessError> {
    let ckpt = load_checkpoint(doc, None, None)?;
    let config = ckpt
        .metadata
        .extra
        .get("config")
        .cloned()
        .ok_or_else(|| super::ConfigError::Invalid("checkpoint carries no run configuration".into()))?;
    let mut cfg: RunConfig =
        serde_json::from_value(config).map_err(|e| super::ConfigError::Parse(e.to_string()))?;
    if cfg.hash() != ckpt.metadata.config_hash {
        return Err(super::ConfigError::Invalid("checkpoint configuration does not match its hash".into()).into());
    }
    if let Some(s) = strategy {
        cfg.strategy = s;
    }
    Ok((Policy::learned(ckpt.network, &cfg), cfg))
}
