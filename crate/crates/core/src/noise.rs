//! Per-episode observation perturbation.
//!
//! Each episode draws one [`NoiseSpec`] from the run's catalog and keeps it
//! for every step; the spec's `subgroup_id` tags the resulting transitions.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{LayoutConfig, Observation, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Poisson,
    SaltPepper,
    Occlusion,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Poisson => "poisson",
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::Occlusion => "occlusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// In [0, 1].
    pub intensity: f64,
    pub subgroup_id: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise catalog is empty")]
    EmptyCatalog,
    #[error("noise intensity {0} outside [0, 1]")]
    Intensity(f64),
    #[error("noise kind {0} listed twice in the catalog")]
    DuplicateKind(&'static str),
}

/// Entry of a run configuration's catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub kind: NoiseKind,
    pub intensity: f64,
}

/// Assigns subgroup ids in catalog order, one per kind.
pub fn build_catalog(entries: &[CatalogEntry]) -> Result<Vec<NoiseSpec>, NoiseError> {
    if entries.is_empty() {
        return Err(NoiseError::EmptyCatalog);
    }
    let mut specs: Vec<NoiseSpec> = Vec::with_capacity(entries.len());
    for (id, e) in entries.iter().enumerate() {
        if !(0.0..=1.0).contains(&e.intensity) {
            return Err(NoiseError::Intensity(e.intensity));
        }
        if specs.iter().any(|s| s.kind == e.kind) {
            return Err(NoiseError::DuplicateKind(e.kind.as_str()));
        }
        specs.push(NoiseSpec {
            kind: e.kind,
            intensity: e.intensity,
            subgroup_id: id,
        });
    }
    Ok(specs)
}

/// Uniform draw over the catalog; the caller keeps it for the whole episode.
pub fn assign_subgroup<R: Rng + ?Sized>(
    rng: &mut R,
    catalog: &[NoiseSpec],
) -> Result<NoiseSpec, NoiseError> {
    if catalog.is_empty() {
        return Err(NoiseError::EmptyCatalog);
    }
    Ok(catalog[rng.random_range(0..catalog.len())])
}

/// Calibration constants of the noise families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConstants {
    /// Gaussian std is `intensity * |R| / 2 * sigma0`.
    pub sigma0: f64,
    /// Shot-noise scale is `intensity * shot0` on the unit range.
    pub shot0: f64,
    /// Salt-and-pepper flip probability is `intensity * flip0`.
    pub flip0: f64,
}

impl Default for NoiseConstants {
    fn default() -> Self {
        Self {
            sigma0: 0.05,
            shot0: 5e-4,
            flip0: 0.2,
        }
    }
}

/// Sensor value range of each observation component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRanges {
    pub velocity: (f64, f64),
    pub goal: (f64, f64),
    pub lidar: (f64, f64),
}

impl ObservationRanges {
    /// Velocity spans `±(v_max + f_max)`, goal coordinates `±` the map diagonal.
    pub fn new(sim: &SimConfig, layout: &LayoutConfig) -> Self {
        let v = sim.v_max + layout.max_vortex_speed();
        let d = layout.bounds().diagonal();
        Self {
            velocity: (-v, v),
            goal: (-d, d),
            lidar: (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub constants: NoiseConstants,
    pub ranges: ObservationRanges,
}

impl NoiseModel {
    pub fn perturb<R: Rng + ?Sized>(&self, obs: &Observation, spec: &NoiseSpec, rng: &mut R) -> Observation {
        perturb(obs, spec, self, rng)
    }
}

fn for_each_component<R: Rng + ?Sized>(
    obs: &mut Observation,
    ranges: &ObservationRanges,
    rng: &mut R,
    mut f: impl FnMut(f64, (f64, f64), &mut R) -> f64,
) {
    obs.velocity.x = f(obs.velocity.x, ranges.velocity, rng);
    obs.velocity.y = f(obs.velocity.y, ranges.velocity, rng);
    obs.goal_rel.x = f(obs.goal_rel.x, ranges.goal, rng);
    obs.goal_rel.y = f(obs.goal_rel.y, ranges.goal, rng);
    for r in obs.lidar.iter_mut() {
        *r = f(*r, ranges.lidar, rng);
    }
}

/// `s * Pois(u / s)` on the unit scale; its mean is `u`.
pub fn shot_noise_unit<R: Rng + ?Sized>(u: f64, scale: f64, rng: &mut R) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let lambda = u / scale;
    match Poisson::new(lambda) {
        Ok(p) => scale * p.sample(rng),
        // lambda beyond the sampler's support only occurs for vanishing scale
        Err(_) => u,
    }
}

/// Applies `spec` to a clean observation.
pub fn perturb<R: Rng + ?Sized>(
    obs: &Observation,
    spec: &NoiseSpec,
    model: &NoiseModel,
    rng: &mut R,
) -> Observation {
    let intensity = spec.intensity;
    let mut out = obs.clone();
    if intensity == 0.0 {
        return out;
    }
    let c = &model.constants;
    match spec.kind {
        NoiseKind::None => {}
        NoiseKind::Gaussian => {
            for_each_component(&mut out, &model.ranges, rng, |v, (lo, hi), rng| {
                let std = intensity * (hi - lo) / 2.0 * c.sigma0;
                let n = Normal::new(0.0, std).expect("finite std");
                (v + n.sample(rng)).clamp(lo, hi)
            });
        }
        NoiseKind::Poisson => {
            let scale = intensity * c.shot0;
            for_each_component(&mut out, &model.ranges, rng, |v, (lo, hi), rng| {
                let u = (v - lo) / (hi - lo);
                (lo + shot_noise_unit(u, scale, rng) * (hi - lo)).clamp(lo, hi)
            });
        }
        NoiseKind::SaltPepper => {
            let p = (intensity * c.flip0).min(1.0);
            for_each_component(&mut out, &model.ranges, rng, |v, (lo, hi), rng| {
                if rng.random::<f64>() < p {
                    if rng.random::<bool>() {
                        hi
                    } else {
                        lo
                    }
                } else {
                    v
                }
            });
        }
        NoiseKind::Occlusion => {
            let beams = out.lidar.len();
            if beams > 0 {
                let arc = ((intensity * beams as f64 / 2.0).ceil() as usize).min(beams);
                let start = rng.random_range(0..beams);
                for k in 0..arc {
                    out.lidar[(start + k) % beams] = 1.0;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Vec2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> NoiseModel {
        NoiseModel {
            constants: NoiseConstants::default(),
            ranges: ObservationRanges::new(&SimConfig::default(), &LayoutConfig::default()),
        }
    }

    fn sample_obs(beams: usize) -> Observation {
        Observation {
            velocity: Vec2::new(0.7, -0.2),
            goal_rel: Vec2::new(12.0, -3.5),
            lidar: (0..beams).map(|k| (k as f64 * 0.13) % 1.0).collect(),
        }
    }

    fn spec(kind: NoiseKind, intensity: f64) -> NoiseSpec {
        NoiseSpec {
            kind,
            intensity,
            subgroup_id: 0,
        }
    }

    #[test]
    fn catalog_of_one_always_drawn() {
        let catalog = build_catalog(&[CatalogEntry {
            kind: NoiseKind::Poisson,
            intensity: 0.4,
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(assign_subgroup(&mut rng, &catalog).unwrap(), catalog[0]);
        }
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(assign_subgroup(&mut rng, &[]), Err(NoiseError::EmptyCatalog));
        assert_eq!(build_catalog(&[]), Err(NoiseError::EmptyCatalog));
    }

    #[test]
    fn assignment_frequencies_are_uniform() {
        let catalog = build_catalog(&[
            CatalogEntry {
                kind: NoiseKind::Gaussian,
                intensity: 0.6,
            },
            CatalogEntry {
                kind: NoiseKind::Poisson,
                intensity: 0.6,
            },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let gaussian = (0..draws)
            .filter(|_| assign_subgroup(&mut rng, &catalog).unwrap().subgroup_id == 0)
            .count();
        let freq = gaussian as f64 / draws as f64;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn assignment_is_seed_deterministic() {
        let catalog = build_catalog(&[
            CatalogEntry {
                kind: NoiseKind::Gaussian,
                intensity: 0.2,
            },
            CatalogEntry {
                kind: NoiseKind::Occlusion,
                intensity: 0.2,
            },
            CatalogEntry {
                kind: NoiseKind::SaltPepper,
                intensity: 0.2,
            },
        ])
        .unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| assign_subgroup(&mut rng, &catalog).unwrap().subgroup_id)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn none_is_identity() {
        let obs = sample_obs(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(perturb(&obs, &spec(NoiseKind::None, 0.6), &model(), &mut rng), obs);
    }

    #[test]
    fn certain_flips_hit_range_extremes() {
        let mut m = model();
        m.constants.flip0 = 1.0;
        let obs = sample_obs(32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = perturb(&obs, &spec(NoiseKind::SaltPepper, 1.0), &m, &mut rng);
        let r = m.ranges;
        for v in [out.velocity.x, out.velocity.y] {
            assert!(v == r.velocity.0 || v == r.velocity.1);
        }
        for g in [out.goal_rel.x, out.goal_rel.y] {
            assert!(g == r.goal.0 || g == r.goal.1);
        }
        assert!(out.lidar.iter().all(|&l| l == 0.0 || l == 1.0));
    }

    #[test]
    fn gaussian_std_on_lidar() {
        let obs = Observation {
            velocity: Vec2::zeros(),
            goal_rel: Vec2::zeros(),
            lidar: vec![0.5],
        };
        for sigma0 in [0.5, NoiseConstants::default().sigma0] {
            let mut m = model();
            m.constants.sigma0 = sigma0;
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 100_000;
            let samples: Vec<f64> = (0..n)
                .map(|_| perturb(&obs, &spec(NoiseKind::Gaussian, 0.6), &m, &mut rng).lidar[0])
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = 0.6 * 0.5 * sigma0;
            assert!((var.sqrt() - expected).abs() / expected < 0.03, "std {}", var.sqrt());
        }
    }

    #[test]
    fn shot_noise_preserves_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for scale in [0.6 * 0.25, 0.6 * NoiseConstants::default().shot0] {
            for u in [0.2, 0.5, 0.9] {
                let n = 100_000;
                let mean = (0..n).map(|_| shot_noise_unit(u, scale, &mut rng)).sum::<f64>() / n as f64;
                assert!((mean - u).abs() / u < 0.02, "u={u} mean={mean}");
            }
        }
    }

    #[test]
    fn occlusion_blanks_one_arc() {
        let obs = Observation {
            velocity: Vec2::new(0.3, 0.1),
            goal_rel: Vec2::new(5.0, 5.0),
            lidar: vec![0.25; 64],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = perturb(&obs, &spec(NoiseKind::Occlusion, 0.6), &model(), &mut rng);
        assert_eq!(out.velocity, obs.velocity);
        assert_eq!(out.goal_rel, obs.goal_rel);
        let blanked: Vec<usize> = (0..64).filter(|&k| out.lidar[k] == 1.0).collect();
        assert_eq!(blanked.len(), 20); // ceil(0.6 * 64 / 2)
        // Contiguous modulo wrap-around: exactly one rising edge.
        let edges = (0..64)
            .filter(|&k| out.lidar[k] == 1.0 && out.lidar[(k + 63) % 64] != 1.0)
            .count();
        assert_eq!(edges, 1);
    }

    fn kind_strategy() -> impl Strategy<Value = NoiseKind> {
        prop_oneof![
            Just(NoiseKind::None),
            Just(NoiseKind::Gaussian),
            Just(NoiseKind::Poisson),
            Just(NoiseKind::SaltPepper),
            Just(NoiseKind::Occlusion),
        ]
    }

    proptest! {
        #[test]
        fn perturbed_lidar_stays_in_range(kind in kind_strategy(), intensity in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = perturb(&sample_obs(24), &spec(kind, intensity), &model(), &mut rng);
            prop_assert!(out.lidar.iter().all(|l| (0.0..=1.0).contains(l)));
            prop_assert_eq!(out.lidar.len(), 24);
        }

        #[test]
        fn zero_intensity_is_identity(kind in kind_strategy(), seed in any::<u64>()) {
            let obs = sample_obs(24);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert_eq!(perturb(&obs, &spec(kind, 0.0), &model(), &mut rng), obs);
        }
    }
}
