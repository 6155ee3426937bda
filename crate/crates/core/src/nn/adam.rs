use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. State is positional: the parameter list passed
/// to `step` must keep the same order across calls.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param<F>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = F::lit(self.cfg.beta1);
        let b2 = F::lit(self.cfg.beta2);
        let one = F::one();
        let bc1 = one - b1.powi(self.t);
        let bc2 = one - b2.powi(self.t);
        let lr = F::lit(self.cfg.lr);
        let eps = F::lit(self.cfg.eps);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::<f64>::zeros("x", &[2]);
        p.value = vec![3.0, -2.0];
        let mut opt = Adam::new(AdamConfig {
            beta1: 0.9,
            ..AdamConfig::new(0.1)
        });
        for _ in 0..500 {
            p.grad = p.value.iter().map(|x| 2.0 * x).collect();
            opt.step(vec![&mut p]);
        }
        assert!(p.value.iter().all(|x| x.abs() < 1e-2), "{:?}", p.value);
    }
}
