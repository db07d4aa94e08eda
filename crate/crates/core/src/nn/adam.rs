use serde::{Deserialize, Serialize};

use super::params::{Grads, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries
            .iter()
            .map(|e| vec![0.0; e.tensor.len()])
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, entry) in params.entries.iter_mut().enumerate() {
            let g = &grads.tensors[i].data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in entry.tensor.data.iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                *p -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use crate::seed::rng;

    #[test]
    fn minimizes_quadratic() {
        let mut r = rng(0);
        let mut p = Params::default();
        let id = p.add("x", 1, 3, Init::Uniform(1.0), &mut r);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &p);
        for _ in 0..2000 {
            let mut g = Grads::zeros_like(&p);
            for (gx, x) in g.tensors[0].data.iter_mut().zip(&p.get(id).data) {
                *gx = 2.0 * (x - 0.5);
            }
            opt.step(&mut p, &g);
        }
        assert!(p.get(id).data.iter().all(|x| (x - 0.5).abs() < 1e-3));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut r = rng(1);
        let mut p = Params::default();
        p.add("x", 2, 2, Init::Xavier, &mut r);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &p);
        opt.step(&mut p, &Grads::zeros_like(&before));
        assert_eq!(p, before);
    }
}
