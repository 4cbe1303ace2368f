//! Learning agents: one update step for DQN, IQN and the robust variants.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distrl::{dqn_loss, dqn_targets, iqn_loss, iqn_targets, TauSamples};
use crate::dro::{
    descent_direction, entropy, mean_gradient, solve_dual_qp, substituted_gradient, DroError, QpSettings,
    SubgroupGradients, SubstitutionMode,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::qnet::{HeadKind, NetError, Network, NetworkSpec};
use crate::replay::SubgroupBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Apf,
    Bug,
    Dqn,
    Iqn,
    Driqn,
    DriqnW,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Apf => "apf",
            AgentKind::Bug => "bug",
            AgentKind::Dqn => "dqn",
            AgentKind::Iqn => "iqn",
            AgentKind::Driqn => "driqn",
            AgentKind::DriqnW => "driqn-w",
        }
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, AgentKind::Apf | AgentKind::Bug)
    }

    pub fn head(self) -> HeadKind {
        if self == AgentKind::Dqn {
            HeadKind::Scalar
        } else {
            HeadKind::Quantile
        }
    }

    pub fn substitution(self) -> Option<SubstitutionMode> {
        match self {
            AgentKind::Driqn => Some(SubstitutionMode::Last),
            AgentKind::DriqnW => Some(SubstitutionMode::Whole),
            _ => None,
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            AgentKind::Apf,
            AgentKind::Bug,
            AgentKind::Dqn,
            AgentKind::Iqn,
            AgentKind::Driqn,
            AgentKind::DriqnW,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown agent '{s}'"))
    }
}

/// Gradient followed by the layers outside the substituted slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestGradient {
    /// Uniform mean over subgroups.
    Uniform,
    /// Subgroups weighted by the dual solution.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: usize,
    pub n_cos: usize,
    pub gamma: f64,
    /// Online quantile samples per transition.
    pub n: usize,
    /// Target quantile samples per transition.
    pub n_next: usize,
    /// Quantile samples for action selection.
    pub k: usize,
    pub kappa: f64,
    pub batch_per_subgroup: usize,
    /// Updates between hard target copies.
    pub target_sync: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Output-layer learning rate; the robust direction is applied with it.
    pub lr_last_start: f64,
    pub lr_last_end: f64,
    pub shrink_cap: f64,
    pub rest_gradient: RestGradient,
    pub qp: QpSettings,
    pub optimizer: OptimizerConfig,
    /// Fixed input scaling for velocity (m/s) and goal coordinates (m).
    pub velocity_scale: f64,
    pub goal_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            n_cos: 64,
            gamma: 0.99,
            n: 8,
            n_next: 8,
            k: 32,
            kappa: 1.0,
            batch_per_subgroup: 32,
            target_sync: 1000,
            lr_start: 1e-4,
            lr_end: 1e-6,
            lr_last_start: 1e-4,
            lr_last_end: 1e-6,
            shrink_cap: 1.0,
            rest_gradient: RestGradient::Uniform,
            qp: QpSettings::default(),
            optimizer: OptimizerConfig::default(),
            velocity_scale: 2.0,
            goal_scale: 10.0,
        }
    }
}

impl LearnerConfig {
    pub fn network_spec(&self, kind: AgentKind, obs_dim: usize, n_actions: usize) -> NetworkSpec {
        NetworkSpec {
            obs_dim,
            hidden: self.hidden,
            n_cos: self.n_cos,
            n_actions,
            kind: kind.head(),
            input_scale: crate::qnet::InputScale {
                velocity: self.velocity_scale,
                goal: self.goal_scale,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dro(#[from] DroError),
    #[error("{kind} is not a learning agent")]
    NotLearned { kind: AgentKind },
    #[error("numerical fault at update {update}: {diagnostics}")]
    NumericalFault { update: u64, diagnostics: String },
}

/// Per-update record of the dual solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroRecord {
    pub lambda: Vec<f64>,
    pub f: Vec<f64>,
    pub subgroups: Vec<usize>,
    pub delta_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    /// Mean of the subgroup losses.
    pub loss: f64,
    /// Norm of the direction handed to the optimizer.
    pub grad_norm: f64,
    pub dro: Option<DroRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub kind: AgentKind,
    pub config: LearnerConfig,
    pub online: Network,
    pub target: Network,
    pub optimizer: Optimizer,
    pub updates: u64,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(kind: AgentKind, config: LearnerConfig, spec: NetworkSpec, rng: &mut R) -> Result<Self, LearnError> {
        if !kind.is_learned() {
            return Err(LearnError::NotLearned { kind });
        }
        let online = Network::new(spec, rng);
        Ok(Self {
            kind,
            config,
            target: online.clone(),
            optimizer: Optimizer::new(config.optimizer, online.param_count()),
            online,
            updates: 0,
        })
    }

    /// Loss and full gradient of every subgroup batch, drawing quantile
    /// fractions in subgroup order.
    fn subgroup_evals<R: Rng + ?Sized>(&self, batches: &[SubgroupBatch], rng: &mut R) -> Result<Vec<(f64, Vec<f64>)>, LearnError> {
        let c = &self.config;
        let mut evals = Vec::with_capacity(batches.len());
        for batch in batches {
            if batch.transitions.is_empty() {
                return Err(DroError::EmptySubgroup(batch.subgroup_id).into());
            }
            let (loss, grad) = match self.kind.head() {
                HeadKind::Scalar => {
                    let y = dqn_targets(&self.target, &batch.transitions, c.gamma)?;
                    dqn_loss(&self.online, &batch.transitions, &y, true)?
                }
                HeadKind::Quantile => {
                    let s = TauSamples::draw(batch.transitions.len(), c.n, c.n_next, rng);
                    let y = iqn_targets(&self.target, &batch.transitions, &s.taus_next, c.n_next, c.gamma)?;
                    iqn_loss(&self.online, &batch.transitions, &s.taus, c.n, &y, c.kappa, true)?
                }
            };
            evals.push((loss, grad.expect("gradient requested")));
        }
        Ok(evals)
    }

    /// One optimizer step on subgroup-pure batches.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batches: &[SubgroupBatch],
        lr_rest: f64,
        lr_last: f64,
        rng: &mut R,
    ) -> Result<UpdateStats, LearnError> {
        if batches.is_empty() {
            return Err(DroError::NoSubgroups.into());
        }
        let evals = self.subgroup_evals(batches, rng)?;
        let loss = evals.iter().map(|(f, _)| f).sum::<f64>() / evals.len() as f64;
        let g_all = mean_gradient(&evals);
        let head = self.online.head_range();
        let d = self.online.param_count();
        let fault = |update: u64, extra: String| LearnError::NumericalFault {
            update,
            diagnostics: format!(
                "losses {:?}, gradient norms {:?}{extra}",
                evals.iter().map(|e| e.0).collect::<Vec<_>>(),
                evals.iter().map(|e| l2(&e.1)).collect::<Vec<_>>()
            ),
        };
        if !loss.is_finite() || g_all.iter().any(|g| !g.is_finite()) {
            return Err(fault(self.updates, String::new()));
        }

        let (direction, record, lr_rest) = match self.kind.substitution() {
            None => (g_all, None, lr_rest),
            Some(mode) => {
                let slice = mode.slice(head.clone(), d);
                let sg = SubgroupGradients::from_full(&evals, slice.clone())?;
                let sol = solve_dual_qp(&sg, self.config.qp);
                let delta = descent_direction(&sg, &sol.lambda);
                let base = match self.config.rest_gradient {
                    RestGradient::Uniform => g_all,
                    RestGradient::Weighted => {
                        let mut w = vec![0.0; d];
                        for ((_, g), l) in evals.iter().zip(&sol.lambda) {
                            for (wi, gi) in w.iter_mut().zip(g) {
                                *wi += l * gi;
                            }
                        }
                        w
                    }
                };
                let direction = substituted_gradient(&base, &delta, slice, self.config.shrink_cap)?;
                let record = DroRecord {
                    entropy: entropy(&sol.lambda),
                    delta_norm: l2(&delta),
                    lambda: sol.lambda,
                    f: sg.f,
                    subgroups: batches.iter().map(|b| b.subgroup_id).collect(),
                    converged: sol.converged,
                    iterations: sol.iterations,
                };
                let lr_rest = if mode == SubstitutionMode::Whole { lr_last } else { lr_rest };
                (direction, Some(record), lr_rest)
            }
        };
        if direction.iter().any(|g| !g.is_finite()) {
            let lambda = record.as_ref().map(|r| format!(", lambda {:?}", r.lambda)).unwrap_or_default();
            return Err(fault(self.updates, lambda));
        }
        let grad_norm = l2(&direction);
        self.optimizer.step(&mut self.online.params, &direction, head, lr_last, lr_rest);
        self.finish(loss, grad_norm, record)
    }

    fn finish(&mut self, loss: f64, grad_norm: f64, dro: Option<DroRecord>) -> Result<UpdateStats, LearnError> {
        self.updates += 1;
        if self.online.params.iter().any(|p| !p.is_finite()) {
            return Err(LearnError::NumericalFault {
                update: self.updates,
                diagnostics: format!("parameters diverged, loss {loss}, gradient norm {grad_norm}, dro {dro:?}"),
            });
        }
        if self.updates.is_multiple_of(self.config.target_sync.max(1)) {
            self.sync_target();
        }
        Ok(UpdateStats { loss, grad_norm, dro })
    }

    pub fn sync_target(&mut self) {
        self.target.params.copy_from_slice(&self.online.params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;
    use crate::world::{Observation, Vec2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> LearnerConfig {
        LearnerConfig {
            hidden: 16,
            n_cos: 8,
            batch_per_subgroup: 4,
            n: 3,
            n_next: 4,
            target_sync: 5,
            ..LearnerConfig::default()
        }
    }

    fn transitions(rng: &mut ChaCha8Rng, count: usize, subgroup: usize) -> Vec<Transition> {
        let obs = |rng: &mut ChaCha8Rng| Observation {
            velocity: Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            goal_rel: Vec2::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)),
            lidar: (0..8).map(|_| rng.random()).collect(),
        };
        (0..count)
            .map(|_| Transition {
                obs: obs(rng),
                action: rng.random_range(0..9),
                reward: rng.random_range(-1.0..1.0),
                next_obs: obs(rng),
                done: rng.random::<f64>() < 0.1,
                subgroup_id: subgroup,
            })
            .collect()
    }

    fn learner(kind: AgentKind) -> Learner {
        let cfg = config();
        Learner::new(kind, cfg, cfg.network_spec(kind, 12, 9), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn baselines_cannot_learn() {
        let cfg = config();
        let spec = cfg.network_spec(AgentKind::Iqn, 12, 9);
        assert!(matches!(
            Learner::new(AgentKind::Apf, cfg, spec, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(LearnError::NotLearned { .. })
        ));
    }

    #[test]
    fn agent_names_round_trip() {
        for name in ["apf", "bug", "dqn", "iqn", "driqn", "driqn-w"] {
            assert_eq!(name.parse::<AgentKind>().unwrap().as_str(), name);
        }
        assert!("qr-dqn".parse::<AgentKind>().is_err());
    }

    #[test]
    fn single_subgroup_driqn_tracks_iqn_exactly() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(2);
        let data = transitions(&mut data_rng, 40, 0);
        let mut iqn = learner(AgentKind::Iqn);
        let mut driqn = learner(AgentKind::Driqn);
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(3), ChaCha8Rng::seed_from_u64(3));
        for step in 0..30 {
            let pick: Vec<&Transition> = (0..4).map(|i| &data[(step * 7 + i * 3) % 40]).collect();
            let batches = [SubgroupBatch {
                subgroup_id: 0,
                transitions: pick,
            }];
            let a = iqn.update(&batches, 1e-3, 1e-3, &mut ra).unwrap();
            let b = driqn.update(&batches, 1e-3, 1e-3, &mut rb).unwrap();
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(b.dro.unwrap().lambda, vec![1.0]);
            assert_eq!(iqn.online.params, driqn.online.params);
            assert_eq!(iqn.target.params, driqn.target.params);
        }
    }

    #[test]
    fn target_syncs_on_schedule() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(4);
        let data = transitions(&mut data_rng, 8, 0);
        let mut l = learner(AgentKind::Dqn);
        let batches = [SubgroupBatch {
            subgroup_id: 0,
            transitions: data.iter().collect(),
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let initial = l.target.params.clone();
        for _ in 0..4 {
            l.update(&batches, 1e-2, 1e-2, &mut rng).unwrap();
            assert_eq!(l.target.params, initial);
            assert_ne!(l.online.params, initial);
        }
        l.update(&batches, 1e-2, 1e-2, &mut rng).unwrap();
        assert_eq!(l.target.params, l.online.params);
    }

    #[test]
    fn whole_substitution_records_dual_solution() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(6);
        let a = transitions(&mut data_rng, 4, 0);
        let b = transitions(&mut data_rng, 4, 1);
        let batches = [
            SubgroupBatch {
                subgroup_id: 0,
                transitions: a.iter().collect(),
            },
            SubgroupBatch {
                subgroup_id: 1,
                transitions: b.iter().collect(),
            },
        ];
        for kind in [AgentKind::Driqn, AgentKind::DriqnW] {
            let mut l = learner(kind);
            let stats = l.update(&batches, 1e-3, 1e-3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
            let rec = stats.dro.unwrap();
            assert_eq!(rec.subgroups, vec![0, 1]);
            assert!((rec.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(rec.entropy >= 0.0 && rec.entropy <= 2f64.ln() + 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut l = learner(AgentKind::Iqn);
        let batches = [SubgroupBatch {
            subgroup_id: 3,
            transitions: vec![],
        }];
        let err = l.update(&batches, 1e-3, 1e-3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, LearnError::Dro(DroError::EmptySubgroup(3))));
    }
}
