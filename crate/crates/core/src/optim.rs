//! Adaptive moment estimation, one state per update group.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Applies one update to `params` using their accumulated gradients and
    /// replaces each with a fresh leaf. Parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, cfg: &AdamConfig, params: Vec<&mut Tensor<F>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        debug_assert_eq!(self.m.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let (lr, eps) = (F::of(cfg.lr), F::of(cfg.eps));
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad();
            let mut data = p.to_vec();
            if let Some(g) = grad {
                for i in 0..data.len() {
                    m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                    v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                }
            } else {
                for i in 0..data.len() {
                    m[i] = b1 * m[i];
                    v[i] = b2 * v[i];
                }
            }
            for i in 0..data.len() {
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= lr * mh / (vh.sqrt() + eps);
            }
            let shape = p.shape().to_vec();
            *p = Tensor::from_vec(data, &shape).expect("same shape").leaf(p.requires_grad());
        }
    }
}
