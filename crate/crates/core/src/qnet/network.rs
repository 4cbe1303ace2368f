use std::f64::consts::PI;
use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::world::Observation;

/// Which output the network produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Implicit quantile network: `Z_tau(s, a)` for each sampled `tau`.
    Quantile,
    /// Plain action values `Q(s, a)`.
    Scalar,
}

/// Fixed input normalization applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScale {
    pub velocity: f64,
    pub goal: f64,
}

impl Default for InputScale {
    fn default() -> Self {
        Self {
            velocity: 1.0,
            goal: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub obs_dim: usize,
    pub hidden: usize,
    /// Width of the cosine embedding of tau.
    pub n_cos: usize,
    pub n_actions: usize,
    pub kind: HeadKind,
    pub input_scale: InputScale,
}

/// Position of one dense layer inside the flat parameter vector.
///
/// Weights are stored row-major as a `fan_in x fan_out` matrix, followed
/// by `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlice {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerSlice {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> Range<usize> {
        let w = self.weights();
        w.end..w.end + self.fan_out
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.bias().end
    }
}

pub const FEATURE_IN: &str = "feature_in";
pub const FEATURE_HIDDEN: &str = "feature_hidden";
pub const TAU_EMBED: &str = "tau_embed";
pub const HEAD_HIDDEN: &str = "head_hidden";
pub const OUTPUT: &str = "output";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub layers: Vec<LayerSlice>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let h = spec.hidden;
        let mut shapes = vec![(FEATURE_IN, spec.obs_dim, h), (FEATURE_HIDDEN, h, h)];
        if spec.kind == HeadKind::Quantile {
            shapes.push((TAU_EMBED, spec.n_cos, h));
        }
        shapes.push((HEAD_HIDDEN, h, h));
        shapes.push((OUTPUT, h, spec.n_actions));

        let mut offset = 0;
        let layers = shapes
            .into_iter()
            .map(|(name, fan_in, fan_out)| {
                let slice = LayerSlice {
                    name: name.to_string(),
                    fan_in,
                    fan_out,
                    offset,
                };
                offset = slice.range().end;
                slice
            })
            .collect();
        Self { layers, len: offset }
    }

    pub fn layer(&self, name: &str) -> &LayerSlice {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .unwrap_or_else(|| panic!("no layer named {name}"))
    }

    /// The output layer's parameters; always the tail of the vector.
    pub fn head(&self) -> Range<usize> {
        self.layers.last().expect("non-empty layout").range()
    }
}

/// Cosine embedding: row i, column j is `cos(pi * j * tau_i)`.
pub fn embed_tau(taus: &[f64], n_cos: usize) -> Result<Array2<f64>, NetError> {
    if let Some(&bad) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(NetError::TauOutOfRange(bad));
    }
    Ok(Array2::from_shape_fn((taus.len(), n_cos), |(i, j)| {
        (PI * j as f64 * taus[i]).cos()
    }))
}

/// Activations cached by a forward pass, enough for an exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub n_tau: usize,
    pub input: Array2<f64>,
    pub feature_in: Array2<f64>,
    /// State features psi(x), one row per observation.
    pub features: Array2<f64>,
    pub embedding: Option<Array2<f64>>,
    /// phi(tau), one row per (observation, tau).
    pub tau_features: Option<Array2<f64>>,
    /// Input of the head: `phi(tau) * psi(x)` or `psi(x)`.
    pub merged: Array2<f64>,
    pub head_hidden: Array2<f64>,
    pub output: Array2<f64>,
    param_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

fn relu_mask(grad: &mut Array2<f64>, activation: &Array2<f64>) {
    grad.zip_mut_with(activation, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

impl Network {
    /// Uniform fan-in initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let layout = ParamLayout::new(&spec);
        let mut params = vec![0.0; layout.len];
        for layer in &layout.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for p in &mut params[layer.range()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self { spec, layout, params }
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self, NetError> {
        let layout = ParamLayout::new(&spec);
        if params.len() != layout.len {
            return Err(NetError::Shape(format!(
                "parameter vector has {} entries, layout needs {}",
                params.len(),
                layout.len
            )));
        }
        Ok(Self { spec, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    pub fn head_range(&self) -> Range<usize> {
        self.layout.head()
    }

    pub fn zero_output_layer(&mut self) {
        let head = self.layout.head();
        self.params[head].fill(0.0);
    }

    fn weights(&self, name: &str) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let l = self.layout.layer(name);
        let w = ArrayView2::from_shape((l.fan_in, l.fan_out), &self.params[l.weights()])
            .expect("layout shape");
        let b = ArrayView1::from(&self.params[l.bias()]);
        (w, b)
    }

    fn dense(&self, name: &str, input: &ArrayView2<f64>, relu: bool) -> Array2<f64> {
        let (w, b) = self.weights(name);
        let mut out = input.dot(&w);
        out += &b;
        if relu {
            relu_inplace(&mut out);
        }
        out
    }

    /// Fails with the name of the first layer holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), NetError> {
        for layer in &self.layout.layers {
            if self.params[layer.range()].iter().any(|p| !p.is_finite()) {
                return Err(NetError::NonFinite {
                    layer: layer.name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Scaled input features of one observation.
    pub fn encode_into(&self, obs: &Observation, mut row: ArrayViewMut1<f64>) {
        let s = self.spec.input_scale;
        row[0] = obs.velocity.x / s.velocity;
        row[1] = obs.velocity.y / s.velocity;
        row[2] = obs.goal_rel.x / s.goal;
        row[3] = obs.goal_rel.y / s.goal;
        for (k, r) in obs.lidar.iter().enumerate() {
            row[4 + k] = *r;
        }
    }

    pub fn encode(&self, observations: &[&Observation]) -> Result<Array2<f64>, NetError> {
        let mut x = Array2::zeros((observations.len(), self.spec.obs_dim));
        for (i, obs) in observations.iter().enumerate() {
            if obs.dim() != self.spec.obs_dim {
                return Err(NetError::Shape(format!(
                    "observation has {} components, network expects {}",
                    obs.dim(),
                    self.spec.obs_dim
                )));
            }
            self.encode_into(obs, x.row_mut(i));
        }
        Ok(x)
    }

    /// Quantile forward pass over a batch.
    ///
    /// `taus` holds `n_tau` fractions per observation (row-major). The
    /// output has one row per (observation, tau) pair, ordered
    /// observation-major, and one column per action. Scalar heads ignore
    /// `taus` and return one row per observation.
    pub fn forward_batch(
        &self,
        observations: &[&Observation],
        taus: &[f64],
        n_tau: usize,
    ) -> Result<ForwardTrace, NetError> {
        self.check_finite()?;
        let batch = observations.len();
        let input = self.encode(observations)?;
        let feature_in = self.dense(FEATURE_IN, &input.view(), true);
        let features = self.dense(FEATURE_HIDDEN, &feature_in.view(), true);

        let (embedding, tau_features, merged) = match self.spec.kind {
            HeadKind::Quantile => {
                if n_tau == 0 || taus.len() != batch * n_tau {
                    return Err(NetError::Shape(format!(
                        "expected {} tau samples ({} per observation), got {}",
                        batch * n_tau,
                        n_tau,
                        taus.len()
                    )));
                }
                let embedding = embed_tau(taus, self.spec.n_cos)?;
                let tau_features = self.dense(TAU_EMBED, &embedding.view(), true);
                let mut merged = tau_features.clone();
                for b in 0..batch {
                    let psi = features.row(b);
                    let mut block = merged.slice_mut(s![b * n_tau..(b + 1) * n_tau, ..]);
                    block *= &psi;
                }
                (Some(embedding), Some(tau_features), merged)
            }
            HeadKind::Scalar => (None, None, features.clone()),
        };
        let head_hidden = self.dense(HEAD_HIDDEN, &merged.view(), true);
        let output = self.dense(OUTPUT, &head_hidden.view(), false);
        let n_tau = if self.spec.kind == HeadKind::Quantile { n_tau } else { 1 };
        Ok(ForwardTrace {
            batch,
            n_tau,
            input,
            feature_in,
            features,
            embedding,
            tau_features,
            merged,
            head_hidden,
            output,
            param_len: self.layout.len,
        })
    }

    /// Quantile values of one observation as an `|A| x N` matrix.
    pub fn quantiles(&self, obs: &Observation, taus: &[f64]) -> Result<Array2<f64>, NetError> {
        let trace = self.forward_batch(&[obs], taus, taus.len())?;
        Ok(trace.output.reversed_axes())
    }

    /// Exact gradient of a scalar loss given `d loss / d output`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &ArrayView2<f64>) -> Result<Vec<f64>, NetError> {
        if trace.param_len != self.layout.len || upstream.dim() != trace.output.dim() {
            return Err(NetError::Shape(format!(
                "upstream gradient {:?} does not match traced output {:?}",
                upstream.dim(),
                trace.output.dim()
            )));
        }
        let mut grad = vec![0.0; self.layout.len];

        let mut d_hidden = self.backprop_dense(OUTPUT, &trace.head_hidden, upstream, &mut grad);
        relu_mask(&mut d_hidden, &trace.head_hidden);
        let d_merged = self.backprop_dense(HEAD_HIDDEN, &trace.merged, &d_hidden.view(), &mut grad);

        let mut d_features = match (&trace.embedding, &trace.tau_features) {
            (Some(embedding), Some(tau_features)) => {
                let n = trace.n_tau;
                let mut d_tau = d_merged.clone();
                let mut d_psi = Array2::zeros(trace.features.dim());
                for b in 0..trace.batch {
                    let rows = b * n..(b + 1) * n;
                    let psi = trace.features.row(b);
                    let mut block = d_tau.slice_mut(s![rows.clone(), ..]);
                    block *= &psi;
                    let prod = &d_merged.slice(s![rows.clone(), ..]) * &tau_features.slice(s![rows, ..]);
                    d_psi.row_mut(b).assign(&prod.sum_axis(Axis(0)));
                }
                relu_mask(&mut d_tau, tau_features);
                self.accumulate_params(TAU_EMBED, embedding, &d_tau.view(), &mut grad);
                d_psi
            }
            _ => d_merged,
        };
        relu_mask(&mut d_features, &trace.features);
        let mut d_in = self.backprop_dense(FEATURE_HIDDEN, &trace.feature_in, &d_features.view(), &mut grad);
        relu_mask(&mut d_in, &trace.feature_in);
        self.accumulate_params(FEATURE_IN, &trace.input, &d_in.view(), &mut grad);
        Ok(grad)
    }

    fn accumulate_params(&self, name: &str, input: &Array2<f64>, d_out: &ArrayView2<f64>, grad: &mut [f64]) {
        let l = self.layout.layer(name);
        {
            let mut gw = ArrayViewMut2::from_shape((l.fan_in, l.fan_out), &mut grad[l.weights()])
                .expect("layout shape");
            general_mat_mul(1.0, &input.t(), d_out, 0.0, &mut gw);
        }
        let mut gb = ArrayViewMut1::from(&mut grad[l.bias()]);
        gb.assign(&d_out.sum_axis(Axis(0)));
    }

    /// Parameter gradients of one dense layer; returns the input gradient.
    fn backprop_dense(&self, name: &str, input: &Array2<f64>, d_out: &ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        self.accumulate_params(name, input, d_out, grad);
        let (w, _) = self.weights(name);
        d_out.dot(&w.t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Vec2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_spec(kind: HeadKind) -> NetworkSpec {
        NetworkSpec {
            obs_dim: 8,
            hidden: 8,
            n_cos: 4,
            n_actions: 9,
            kind,
            input_scale: InputScale {
                velocity: 2.0,
                goal: 10.0,
            },
        }
    }

    fn obs(seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Observation {
            velocity: Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            goal_rel: Vec2::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)),
            lidar: (0..4).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn embedding_values() {
        let e = embed_tau(&[0.0, 1.0, 0.5], 4).unwrap();
        assert!(e.row(0).iter().all(|&v| v == 1.0));
        assert_eq!(e[[1, 1]], -1.0);
        assert_eq!(e[[2, 2]], -1.0);
        assert!(matches!(embed_tau(&[1.5], 4), Err(NetError::TauOutOfRange(_))));
    }

    #[test]
    fn layout_is_contiguous_with_head_last() {
        let layout = ParamLayout::new(&tiny_spec(HeadKind::Quantile));
        let mut end = 0;
        for l in &layout.layers {
            assert_eq!(l.offset, end);
            end = l.range().end;
        }
        assert_eq!(end, layout.len);
        assert_eq!(layout.head().end, layout.len);
        assert_eq!(layout.head().len(), 8 * 9 + 9);
        assert_eq!(layout.layers.len(), 5);
        assert_eq!(ParamLayout::new(&tiny_spec(HeadKind::Scalar)).layers.len(), 4);
    }

    #[test]
    fn zero_head_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
        net.zero_output_layer();
        let q = net.quantiles(&obs(3), &[0.1, 0.7, 0.99]).unwrap();
        assert_eq!(q.dim(), (9, 3));
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_taus_give_identical_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
        let q = net.quantiles(&obs(4), &[0.3, 0.8, 0.3]).unwrap();
        assert_eq!(q.column(0), q.column(2));
    }

    #[test]
    fn tau_permutation_permutes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
        let o = obs(6);
        let a = net.quantiles(&o, &[0.1, 0.5, 0.9]).unwrap();
        let b = net.quantiles(&o, &[0.9, 0.1, 0.5]).unwrap();
        assert_eq!(a.column(0), b.column(1));
        assert_eq!(a.column(1), b.column(2));
        assert_eq!(a.column(2), b.column(0));
        assert_eq!(a, net.quantiles(&o, &[0.1, 0.5, 0.9]).unwrap());
    }

    #[test]
    fn non_finite_parameter_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
        let idx = net.layout.layer(TAU_EMBED).bias().start;
        net.params[idx] = f64::NAN;
        match net.quantiles(&obs(1), &[0.5]) {
            Err(NetError::NonFinite { layer }) => assert_eq!(layer, TAU_EMBED),
            other => panic!("expected fault, got {other:?}"),
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
        let (a, b) = (obs(1), obs(2));
        let trace = net.forward_batch(&[&a, &b], &[0.2, 0.4, 0.6, 0.8], 2).unwrap();
        let upstream = Array2::zeros(trace.output.dim());
        assert!(net.backward(&trace, &upstream.view()).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_upstream_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::new(tiny_spec(HeadKind::Scalar), &mut rng);
        let o = obs(1);
        let trace = net.forward_batch(&[&o], &[], 0).unwrap();
        assert_eq!(trace.output.dim(), (1, 9));
        let upstream = Array2::zeros((2, 9));
        assert!(matches!(net.backward(&trace, &upstream.view()), Err(NetError::Shape(_))));
    }

    /// Straight-line re-evaluation with explicit loops.
    fn reference_forward(net: &Network, o: &Observation, tau: f64) -> Vec<f64> {
        let p = &net.params;
        let dense = |name: &str, x: &[f64], relu: bool| -> Vec<f64> {
            let l = net.layout.layer(name);
            (0..l.fan_out)
                .map(|j| {
                    let mut acc = p[l.bias().start + j];
                    for (i, xi) in x.iter().enumerate() {
                        acc += xi * p[l.offset + i * l.fan_out + j];
                    }
                    if relu {
                        acc.max(0.0)
                    } else {
                        acc
                    }
                })
                .collect()
        };
        let s = net.spec.input_scale;
        let mut x = vec![o.velocity.x / s.velocity, o.velocity.y / s.velocity, o.goal_rel.x / s.goal, o.goal_rel.y / s.goal];
        x.extend(&o.lidar);
        let psi = dense(FEATURE_HIDDEN, &dense(FEATURE_IN, &x, true), true);
        let emb: Vec<f64> = (0..net.spec.n_cos).map(|j| (PI * j as f64 * tau).cos()).collect();
        let phi = dense(TAU_EMBED, &emb, true);
        let merged: Vec<f64> = psi.iter().zip(&phi).map(|(a, b)| a * b).collect();
        dense(OUTPUT, &dense(HEAD_HIDDEN, &merged, true), false)
    }

    #[test]
    fn matches_straight_line_reference() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
            assert!(net.param_count() <= 500);
            let o = obs(seed + 100);
            let taus = [0.05, 0.5, 0.93];
            let q = net.quantiles(&o, &taus).unwrap();
            for (n, &tau) in taus.iter().enumerate() {
                let reference = reference_forward(&net, &o, tau);
                for a in 0..9 {
                    assert!((q[[a, n]] - reference[a]).abs() <= 1e-12);
                }
            }
        }
    }

    fn half_square_loss(net: &Network, batch: &[&Observation], taus: &[f64], n: usize) -> f64 {
        let t = net.forward_batch(batch, taus, n).unwrap();
        0.5 * t.output.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn gradient_matches_central_differences() {
        for kind in [HeadKind::Quantile, HeadKind::Scalar] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut net = Network::new(tiny_spec(kind), &mut rng);
            let (a, b) = (obs(21), obs(22));
            let batch = [&a, &b];
            let taus = [0.15, 0.55, 0.35, 0.95];
            let trace = net.forward_batch(&batch, &taus, 2).unwrap();
            let grad = net.backward(&trace, &trace.output.view()).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; grad.len()];
            for i in 0..grad.len() {
                let orig = net.params[i];
                net.params[i] = orig + h;
                let up = half_square_loss(&net, &batch, &taus, 2);
                net.params[i] = orig - h;
                let down = half_square_loss(&net, &batch, &taus, 2);
                net.params[i] = orig;
                fd[i] = (up - down) / (2.0 * h);
            }
            let fd_max = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = grad.iter().zip(&fd).fold(0.0f64, |m, (g, f)| m.max((g - f).abs()));
            assert!(err / (1.0 + fd_max) <= 1e-6, "{kind:?}: {err}");
        }
    }

    #[test]
    fn head_slice_equals_frozen_feature_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Network::new(tiny_spec(HeadKind::Quantile), &mut rng);
        let (a, b, c) = (obs(31), obs(32), obs(33));
        let taus = [0.1, 0.9, 0.4, 0.6, 0.2, 0.3];
        let trace = net.forward_batch(&[&a, &b, &c], &taus, 2).unwrap();
        let upstream = trace.output.mapv(|v| v.sin());
        let grad = net.backward(&trace, &upstream.view()).unwrap();
        // Head-only gradient on frozen last hidden activations.
        let l = net.layout.layer(OUTPUT);
        let feats = &trace.head_hidden;
        let mut expected = vec![0.0; l.range().len()];
        for r in 0..feats.nrows() {
            for j in 0..l.fan_out {
                for i in 0..l.fan_in {
                    expected[i * l.fan_out + j] += feats[[r, i]] * upstream[[r, j]];
                }
                expected[l.fan_in * l.fan_out + j] += upstream[[r, j]];
            }
        }
        for (g, e) in grad[net.head_range()].iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-12);
        }
    }
}
