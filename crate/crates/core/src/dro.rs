//! Subgroup robust descent: the dual quadratic program over the simplex
//! and substitution of its descent direction into the parameter update.

use std::ops::Range;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DroError {
    #[error("no subgroup contributed a batch")]
    NoSubgroups,
    #[error("subgroup {0} has an empty batch")]
    EmptySubgroup(usize),
    #[error("non-finite {0} in subgroup statistics")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Which parameters the robust direction replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionMode {
    /// Output layer only; the rest follows the mean gradient.
    Last,
    /// Every parameter.
    Whole,
}

impl SubstitutionMode {
    pub fn slice(self, head: Range<usize>, param_count: usize) -> Range<usize> {
        match self {
            SubstitutionMode::Last => head,
            SubstitutionMode::Whole => 0..param_count,
        }
    }
}

/// Subgroup mean losses `f` and their gradients restricted to a slice,
/// one row per subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupGradients {
    pub f: Vec<f64>,
    pub g: Array2<f64>,
}

impl SubgroupGradients {
    pub fn new(f: Vec<f64>, g: Array2<f64>) -> Result<Self, DroError> {
        if f.is_empty() {
            return Err(DroError::NoSubgroups);
        }
        if g.nrows() != f.len() {
            return Err(DroError::Dimension(format!("{} losses but {} gradient rows", f.len(), g.nrows())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(DroError::NonFinite("loss"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DroError::NonFinite("gradient"));
        }
        Ok(Self { f, g })
    }

    /// Gathers `(loss, full gradient)` pairs and keeps `slice` of each gradient.
    pub fn from_full(evals: &[(f64, Vec<f64>)], slice: Range<usize>) -> Result<Self, DroError> {
        let width = slice.len();
        let mut g = Array2::zeros((evals.len(), width));
        for (j, (_, grad)) in evals.iter().enumerate() {
            if slice.end > grad.len() {
                return Err(DroError::Dimension(format!(
                    "slice {slice:?} exceeds gradient of length {}",
                    grad.len()
                )));
            }
            g.row_mut(j).assign(&ArrayView1::from(&grad[slice.clone()]));
        }
        Self::new(evals.iter().map(|(f, _)| *f).collect(), g)
    }

    pub fn subgroups(&self) -> usize {
        self.f.len()
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn gram(&self) -> Array2<f64> {
        self.g.dot(&self.g.t())
    }
}

/// Uniform mean of per-subgroup full gradients, summed in subgroup order.
pub fn mean_gradient(evals: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let mut out = evals[0].1.clone();
    for (_, g) in &evals[1..] {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    let j = evals.len() as f64;
    for o in &mut out {
        *o /= j;
    }
    out
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumulative += uk;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    /// Bound on the gradient-mapping norm that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `1/2 lambda^T Q lambda - lambda^T f`.
pub fn dual_objective(gram: &Array2<f64>, f: &[f64], lambda: &[f64]) -> f64 {
    let l = ArrayView1::from(lambda);
    0.5 * l.dot(&gram.dot(&l)) - l.dot(&ArrayView1::from(f))
}

/// Projected gradient descent on the dual from the uniform point with
/// step `1 / (||G G^T||_F + eps)`.
pub fn solve_dual_qp(sg: &SubgroupGradients, settings: QpSettings) -> DualSolution {
    let j = sg.subgroups();
    if j == 1 {
        let lambda = vec![1.0];
        let objective = dual_objective(&sg.gram(), &sg.f, &lambda);
        return DualSolution {
            lambda,
            objective,
            iterations: 0,
            converged: true,
        };
    }
    let gram = sg.gram();
    let f = ArrayView1::from(&sg.f);
    let norm = gram.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = 1.0 / (norm + 1e-12);

    let mut lambda = vec![1.0 / j as f64; j];
    let mut objective = dual_objective(&gram, &sg.f, &lambda);
    let mut best = (lambda.clone(), objective);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        let l = ArrayView1::from(&lambda);
        let grad = &gram.dot(&l) - &f;
        let trial: Vec<f64> = lambda.iter().zip(grad.iter()).map(|(x, g)| x - step * g).collect();
        let next = project_simplex(&trial);
        let mapping = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| ((b - a) / step).powi(2))
            .sum::<f64>()
            .sqrt();
        lambda = next;
        objective = dual_objective(&gram, &sg.f, &lambda);
        if objective <= best.1 {
            best = (lambda.clone(), objective);
        }
        if mapping <= settings.tol {
            converged = true;
            break;
        }
    }
    DualSolution {
        lambda: best.0,
        objective: best.1,
        iterations,
        converged,
    }
}

/// `delta* = -G^T lambda`, accumulated in subgroup order.
pub fn descent_direction(sg: &SubgroupGradients, lambda: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = sg.g.row(0).iter().map(|&g| -(lambda[0] * g)).collect();
    for (j, row) in sg.g.rows().into_iter().enumerate().skip(1) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o -= lambda[j] * g;
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `delta` so its norm does not exceed `cap * reference_norm`.
pub fn shrink(delta: &[f64], reference_norm: f64, cap: f64) -> Vec<f64> {
    let limit = cap * reference_norm;
    let n = norm(delta);
    if n > limit {
        let scale = limit / n;
        delta.iter().map(|d| d * scale).collect()
    } else {
        delta.to_vec()
    }
}

/// The update direction handed to the optimizer: `g_all` outside `slice`,
/// the shrunk robust step `-delta~` inside it.
pub fn substituted_gradient(g_all: &[f64], delta: &[f64], slice: Range<usize>, shrink_cap: f64) -> Result<Vec<f64>, DroError> {
    if slice.len() != delta.len() || slice.end > g_all.len() {
        return Err(DroError::Dimension(format!(
            "direction of length {} for slice {slice:?} of {} parameters",
            delta.len(),
            g_all.len()
        )));
    }
    let shrunk = shrink(delta, norm(&g_all[slice.clone()]), shrink_cap);
    let mut out = g_all.to_vec();
    for (o, d) in out[slice].iter_mut().zip(&shrunk) {
        *o = -d;
    }
    Ok(out)
}

/// Plain-step substitution: `theta_slice += lr_last * delta~` and
/// `theta_rest -= lr_rest * g_all`.
pub fn substitute_and_update(
    params: &mut [f64],
    g_all: &[f64],
    delta: &[f64],
    slice: Range<usize>,
    lr_last: f64,
    lr_rest: f64,
    shrink_cap: f64,
) -> Result<(), DroError> {
    if params.len() != g_all.len() || slice.len() != delta.len() || slice.end > params.len() {
        return Err(DroError::Dimension(format!(
            "{} parameters, {} gradient entries, direction {} for slice {slice:?}",
            params.len(),
            g_all.len(),
            delta.len()
        )));
    }
    let shrunk = shrink(delta, norm(&g_all[slice.clone()]), shrink_cap);
    for (i, p) in params.iter_mut().enumerate() {
        if slice.contains(&i) {
            *p += lr_last * shrunk[i - slice.start];
        } else {
            *p -= lr_rest * g_all[i];
        }
    }
    Ok(())
}

/// Shannon entropy (nats) of a simplex vector.
pub fn entropy(lambda: &[f64]) -> f64 {
    -lambda.iter().filter(|&&l| l > 0.0).map(|l| l * l.ln()).sum::<f64>()
}
