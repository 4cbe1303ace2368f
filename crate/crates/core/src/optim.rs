//! First-order optimizers with a separate learning rate for the output layer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub steps: u64,
    /// Adam first and second moments; empty for SGD.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Self {
        let n = match config {
            OptimizerConfig::Sgd => 0,
            OptimizerConfig::Adam { .. } => param_count,
        };
        Self {
            config,
            steps: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Descends along `grad`, using `lr_head` on `head` and `lr_rest` elsewhere.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], head: Range<usize>, lr_head: f64, lr_rest: f64) {
        assert_eq!(params.len(), grad.len(), "gradient length");
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd => {
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let lr = if head.contains(&i) { lr_head } else { lr_rest };
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    let lr = if head.contains(&i) { lr_head } else { lr_rest };
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_uses_slice_rates() {
        let mut opt = Optimizer::new(OptimizerConfig::Sgd, 3);
        let mut p = vec![1.0, 1.0, 1.0];
        opt.step(&mut p, &[1.0, 1.0, 1.0], 2..3, 0.5, 0.25);
        assert_eq!(p, vec![0.75, 0.75, 0.5]);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 2);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.5], 0..0, 1.0, 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 2);
        let mut p = vec![3.0, -2.0];
        for _ in 0..5000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g, 0..0, 0.0, 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }
}
