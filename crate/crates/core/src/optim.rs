//! Full-batch optimizers over the flat parameter tensors of a model.

use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

impl std::str::FromStr for OptimizerKind {
    type Err = MdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "gd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::Adamw),
            other => Err(MdError::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.95;
pub const ADAM_EPS: f64 = 1e-8;

/// Gradient descent or AdamW, both with decoupled weight decay
/// p <- p (1 - lr wd) applied before the gradient step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, params: &ModelParams) -> Self {
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adamw => {
                let zeros: Vec<Vec<f64>> = params
                    .tensors()
                    .iter()
                    .map(|t| vec![0.0; t.len()])
                    .collect();
                (zeros.clone(), zeros)
            }
        };
        Self {
            kind,
            lr,
            weight_decay,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let decay = 1.0 - self.lr * self.weight_decay;
        let grads = grads.tensors();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi = *pi * decay - self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adamw => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] = p[i] * decay - self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpParams;
    use nalgebra::{DMatrix, DVector};

    fn single(w: f64, v: f64) -> ModelParams {
        ModelParams::Mlp(
            MlpParams::new(DMatrix::from_element(1, 1, w), DVector::from_element(1, v)).unwrap(),
        )
    }

    #[test]
    fn sgd_step_with_decay() {
        let mut p = single(2.0, -1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 0.5, &p);
        opt.step(&mut p, &single(1.0, 3.0));
        let t = p.tensors();
        assert!((t[0][0] - (2.0 * 0.95 - 0.1)).abs() < 1e-15);
        assert!((t[1][0] - (-0.95 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn first_adamw_step_moves_by_lr_times_sign() {
        let mut p = single(0.5, 0.5);
        let mut opt = Optimizer::new(OptimizerKind::Adamw, 0.01, 0.0, &p);
        opt.step(&mut p, &single(4.0, -0.001));
        let t = p.tensors();
        assert!((t[0][0] - 0.49).abs() < 1e-9);
        assert!((t[1][0] - 0.51).abs() < 1e-6);
    }

    #[test]
    fn adamw_minimizes_a_quadratic() {
        let mut p = single(3.0, -2.0);
        let mut opt = Optimizer::new(OptimizerKind::Adamw, 0.01, 0.0, &p);
        for _ in 0..5000 {
            let t = p.tensors();
            let g = single(2.0 * (t[0][0] - 1.0), 2.0 * t[1][0]);
            opt.step(&mut p, &g);
        }
        let t = p.tensors();
        assert!(
            (t[0][0] - 1.0).abs() < 2e-2 && t[1][0].abs() < 2e-2,
            "{t:?}"
        );
    }
}
