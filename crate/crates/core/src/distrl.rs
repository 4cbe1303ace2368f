//! Quantile losses, TD targets, distortion and action selection.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::qnet::{HeadKind, NetError, Network};
use crate::replay::Transition;
use crate::world::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Identity,
    Cvar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// CVaR level in (0, 1].
    pub eta: f64,
}

impl DistortionSpec {
    pub const IDENTITY: Self = Self {
        kind: DistortionKind::Identity,
        eta: 1.0,
    };

    pub fn cvar(eta: f64) -> Self {
        Self {
            kind: DistortionKind::Cvar,
            eta,
        }
    }
}

pub fn distort(tau: f64, spec: DistortionSpec) -> f64 {
    match spec.kind {
        DistortionKind::Identity => tau,
        DistortionKind::Cvar => spec.eta * tau,
    }
}

/// Action-selection strategy during rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Undistorted mean of the return distribution.
    Greedy,
    /// CVaR whose level shrinks as the nearest obstacle gets closer.
    Adaptive,
}

impl Strategy {
    pub fn distortion(self, obs: &Observation, eta_min: f64) -> DistortionSpec {
        match self {
            Strategy::Greedy => DistortionSpec::IDENTITY,
            Strategy::Adaptive => DistortionSpec::cvar(adaptive_eta(obs, eta_min)),
        }
    }
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "adaptive" => Ok(Strategy::Adaptive),
            _ => Err(format!("unknown strategy '{s}'")),
        }
    }
}

/// CVaR level from the nearest LiDAR return: `eta_min` at contact, rising
/// linearly to 1 at the edge of the sensing range; 1 when nothing is seen.
pub fn adaptive_eta(obs: &Observation, eta_min: f64) -> f64 {
    if obs.lidar.iter().all(|&r| r >= 1.0) {
        return 1.0;
    }
    // d_near / d_sense is the normalized minimum reading itself.
    let near = obs.min_lidar().clamp(0.0, 1.0);
    eta_min + (1.0 - eta_min) * near
}

/// `delta[i][j] = r + gamma * (1 - done) * z_next[j] - z_cur[i]`.
pub fn td_error_matrix(reward: f64, gamma: f64, done: bool, z_next: &[f64], z_cur: &[f64]) -> Array2<f64> {
    let discount = if done { 0.0 } else { gamma };
    Array2::from_shape_fn((z_cur.len(), z_next.len()), |(i, j)| {
        reward + discount * z_next[j] - z_cur[i]
    })
}

/// Huber function `L_kappa(u)`.
pub fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn huber_slope(u: f64, kappa: f64) -> f64 {
    u.clamp(-kappa, kappa)
}

fn quantile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0).abs()
    } else {
        tau
    }
}

/// `rho_tau^kappa(u) = |tau - 1{u < 0}| * L_kappa(u) / kappa`.
pub fn huber_quantile(u: f64, tau: f64, kappa: f64) -> f64 {
    quantile_weight(u, tau) * huber(u, kappa) / kappa
}

/// Derivative of [`huber_quantile`] with respect to `u`.
pub fn huber_quantile_slope(u: f64, tau: f64, kappa: f64) -> f64 {
    quantile_weight(u, tau) * huber_slope(u, kappa) / kappa
}

/// `(1/N') sum_i sum_j rho_{tau_i}(delta_ij)` for one transition.
pub fn quantile_loss(td: &Array2<f64>, taus: &[f64], kappa: f64) -> f64 {
    let mut total = 0.0;
    for (i, row) in td.rows().into_iter().enumerate() {
        for &u in row {
            total += huber_quantile(u, taus[i], kappa);
        }
    }
    total / td.ncols() as f64
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-action mean of `Z_{beta(tau_k)}` over `k` sampled fractions, or the
/// action values of a scalar head.
pub fn action_values<R: Rng + ?Sized>(
    net: &Network,
    obs: &Observation,
    k: usize,
    spec: DistortionSpec,
    rng: &mut R,
) -> Result<Vec<f64>, NetError> {
    match net.spec.kind {
        HeadKind::Scalar => Ok(net.forward_batch(&[obs], &[], 0)?.output.row(0).to_vec()),
        HeadKind::Quantile => {
            let taus: Vec<f64> = (0..k).map(|_| distort(rng.random::<f64>(), spec)).collect();
            let z = net.quantiles(obs, &taus)?;
            Ok(z.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect())
        }
    }
}

pub fn select_action<R: Rng + ?Sized>(
    net: &Network,
    obs: &Observation,
    k: usize,
    spec: DistortionSpec,
    rng: &mut R,
) -> Result<usize, NetError> {
    Ok(argmax(&action_values(net, obs, k, spec, rng)?))
}

/// Quantile fractions for one update: `n` per transition for the online
/// network and `n_next` for the target network, drawn in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSamples {
    pub n: usize,
    pub n_next: usize,
    pub taus: Vec<f64>,
    pub taus_next: Vec<f64>,
}

impl TauSamples {
    pub fn draw<R: Rng + ?Sized>(batch: usize, n: usize, n_next: usize, rng: &mut R) -> Self {
        let taus = (0..batch * n).map(|_| rng.random()).collect();
        let taus_next = (0..batch * n_next).map(|_| rng.random()).collect();
        Self {
            n,
            n_next,
            taus,
            taus_next,
        }
    }
}

/// Bootstrapped targets `r + gamma (1 - done) Z'_{tau'_j}(s', a*)`, one row
/// per transition, where `a*` maximizes the target network's mean over `tau'`.
pub fn iqn_targets(
    target: &Network,
    batch: &[&Transition],
    taus_next: &[f64],
    n_next: usize,
    gamma: f64,
) -> Result<Array2<f64>, NetError> {
    let next: Vec<&Observation> = batch.iter().map(|t| &t.next_obs).collect();
    let z = target.forward_batch(&next, taus_next, n_next)?.output;
    let mut out = Array2::zeros((batch.len(), n_next));
    let mut means = vec![0.0; target.spec.n_actions];
    for (b, t) in batch.iter().enumerate() {
        if t.done {
            out.row_mut(b).fill(t.reward);
            continue;
        }
        let block = z.slice(ndarray::s![b * n_next..(b + 1) * n_next, ..]);
        for (a, m) in means.iter_mut().enumerate() {
            *m = block.column(a).sum() / n_next as f64;
        }
        let best = argmax(&means);
        for j in 0..n_next {
            out[[b, j]] = t.reward + gamma * block[[j, best]];
        }
    }
    Ok(out)
}

/// Mean IQN loss over `batch` and, on request, its exact gradient.
///
/// `targets` comes from [`iqn_targets`] and is held fixed.
pub fn iqn_loss(
    online: &Network,
    batch: &[&Transition],
    taus: &[f64],
    n: usize,
    targets: &Array2<f64>,
    kappa: f64,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), NetError> {
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.obs).collect();
    let trace = online.forward_batch(&obs, taus, n)?;
    let n_next = targets.ncols();
    let scale = 1.0 / (n_next as f64 * batch.len() as f64);
    let mut upstream = Array2::zeros(trace.output.dim());
    let mut total = 0.0;
    for (b, t) in batch.iter().enumerate() {
        for i in 0..n {
            let row = b * n + i;
            let tau = taus[row];
            let z = trace.output[[row, t.action]];
            let mut slope = 0.0;
            for &y in targets.row(b) {
                let u = y - z;
                total += huber_quantile(u, tau, kappa);
                slope += huber_quantile_slope(u, tau, kappa);
            }
            upstream[[row, t.action]] = -slope * scale;
        }
    }
    let loss = total * scale;
    let grad = if with_grad {
        Some(online.backward(&trace, &upstream.view())?)
    } else {
        None
    };
    Ok((loss, grad))
}

/// `r + gamma (1 - done) max_a' Q_target(s', a')` per transition.
pub fn dqn_targets(target: &Network, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>, NetError> {
    let next: Vec<&Observation> = batch.iter().map(|t| &t.next_obs).collect();
    let q = target.forward_batch(&next, &[], 0)?.output;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            if t.done {
                t.reward
            } else {
                let row = q.row(b);
                t.reward + gamma * row[argmax(row.as_slice().expect("contiguous row"))]
            }
        })
        .collect())
}

/// Mean Huber (`kappa = 1`) TD loss of a scalar head and its gradient.
pub fn dqn_loss(
    online: &Network,
    batch: &[&Transition],
    targets: &[f64],
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), NetError> {
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.obs).collect();
    let trace = online.forward_batch(&obs, &[], 0)?;
    let scale = 1.0 / batch.len() as f64;
    let mut upstream = Array2::zeros(trace.output.dim());
    let mut total = 0.0;
    for (b, t) in batch.iter().enumerate() {
        let delta = targets[b] - trace.output[[b, t.action]];
        total += huber(delta, 1.0);
        upstream[[b, t.action]] = -huber_slope(delta, 1.0) * scale;
    }
    let grad = if with_grad {
        Some(online.backward(&trace, &upstream.view())?)
    } else {
        None
    };
    Ok((total * scale, grad))
}

/// Linear interpolation from `start` to `end` over `duration` steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub duration: u64,
}

impl LinearSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.duration == 0 || step >= self.duration {
            return self.end;
        }
        let frac = step as f64 / self.duration as f64;
        self.start + (self.end - self.start) * frac
    }
}
