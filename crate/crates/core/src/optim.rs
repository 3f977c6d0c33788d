//! Adam on flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `x` against gradient `g`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= learning_rate * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamConfig::with_rate(0.1), 2);
        let mut x = vec![1.0, -2.0];
        opt.step(&mut x, &[3.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-7);
        assert!((x[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimises_quadratic() {
        let mut opt = Adam::new(AdamConfig::with_rate(0.05), 3);
        let target = [1.0, -2.0, 0.5];
        let mut x = vec![0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(&mut x, &g);
        }
        for (x, t) in x.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3);
        }
        assert_eq!(opt.steps(), 2000);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = Adam::new(AdamConfig::with_rate(0.1), 2);
        let mut x = vec![0.3, 0.4];
        opt.step(&mut x, &[0.0, 0.0]);
        assert_eq!(x, vec![0.3, 0.4]);
    }
}
