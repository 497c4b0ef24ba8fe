use serde::{Deserialize, Serialize};

use super::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update. `grads[i]` belongs to the `i`-th parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.tensor_mut(i).data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::random::seeded;
    use rand::Rng;

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::default();
        p.push("theta", Tensor::new(vec![1], vec![value]));
        p
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = seeded(11);
        let grads: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cfg = AdamConfig::default();

        let mut params = single(0.7);
        let mut state = AdamState::new(cfg, &params);
        let (mut theta, mut m, mut v) = (0.7_f64, 0.0_f64, 0.0_f64);
        for (t, &g) in grads.iter().enumerate() {
            state.step(&mut params, &[vec![g]]);
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            theta -= 1e-3 * mhat / (vhat.sqrt() + 1e-8);
            assert!((params.tensor(0).data[0] - theta).abs() <= 1e-12);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let target = 0.3;
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut params = single(-1.0);
        let mut state = AdamState::new(cfg, &params);
        let mut reached = None;
        for step in 1..=500 {
            let theta = params.tensor(0).data[0];
            state.step(&mut params, &[vec![2.0 * (theta - target)]]);
            if (params.tensor(0).data[0] - target).abs() < 1e-3 && reached.is_none() {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!((params.tensor(0).data[0] - target).abs() < 1e-3);
    }
}
