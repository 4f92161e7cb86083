//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    cfg: AdamWConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, len: usize) -> Result<Self> {
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", cfg.learning_rate)));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::Config("moment decay rates must lie in [0, 1)".into()));
        }
        if !(cfg.weight_decay >= 0.0 && cfg.epsilon > 0.0) {
            return Err(Error::Config("weight decay and epsilon must be non-negative".into()));
        }
        Ok(Self {
            cfg,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        })
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `θ ← θ − lr·(m̂ / (√v̂ + ε) + wd·θ)`.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape("parameter and gradient lengths differ from optimizer state".into()));
        }
        self.t += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::of(self.cfg.learning_rate);
        let wd = T::of(self.cfg.weight_decay);
        let eps = T::of(self.cfg.epsilon);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes the first step ±lr·g/(|g|+ε).
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::<f64>::new(cfg, 2).unwrap();
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[0.5, -2.0]).unwrap();
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut opt = AdamW::<f64>::new(
            AdamWConfig {
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            1,
        )
        .unwrap();
        let mut p = [2.0];
        opt.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - (2.0 - 1e-3 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn minimises_quadratic() {
        let mut opt = AdamW::<f64>::new(
            AdamWConfig {
                learning_rate: 0.05,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            1,
        )
        .unwrap();
        let mut p = [3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
        assert!(AdamW::<f64>::new(AdamWConfig { learning_rate: 0.0, ..AdamWConfig::default() }, 1).is_err());
    }
}
