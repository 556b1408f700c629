use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 5e-4,
        }
    }
}

/// Adam with decoupled weight decay: the decay shrinks weights directly by
/// `lr · λ` instead of passing through the moment estimates.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub params: AdamWParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(params: AdamWParams, shapes: &[Tensor]) -> Self {
        Self {
            params,
            m: shapes.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::mismatch("adamw_step", &[self.m.len()], &[params.len(), grads.len()]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.numel() != m.len() || g.len() != m.len() {
                return Err(Error::mismatch("adamw_step", &[m.len()], &[p.numel(), g.len()]));
            }
        }
        self.step += 1;
        let AdamWParams { beta1, beta2, eps, weight_decay } = self.params;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                *w -= lr * weight_decay * *w + lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_no_decay_is_noop() {
        let mut p = vec![Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap()];
        let before = p.clone();
        let mut opt = AdamW::new(AdamWParams { weight_decay: 0.0, ..Default::default() }, &p);
        opt.step(&mut p, &[vec![0.0; 3]], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn zero_grads_shrink_by_decay() {
        let mut p = vec![Tensor::new(&[2], vec![1.0, -4.0]).unwrap()];
        let mut opt = AdamW::new(AdamWParams { weight_decay: 0.1, ..Default::default() }, &p);
        opt.step(&mut p, &[vec![0.0; 2]], 0.5).unwrap();
        assert_eq!(p[0].data(), [0.95, -3.8]);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = vec![Tensor::new(&[1], vec![5.0]).unwrap()];
        let mut opt = AdamW::new(AdamWParams { weight_decay: 0.0, ..Default::default() }, &p);
        for _ in 0..500 {
            let g = 2.0 * (p[0].data()[0] - 1.5);
            opt.step(&mut p, &[vec![g]], 0.05).unwrap();
        }
        assert!((p[0].data()[0] - 1.5).abs() < 1e-2, "{:?}", p[0].data());
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut opt = AdamW::new(AdamWParams::default(), &p);
        assert!(opt.step(&mut p, &[vec![0.0; 3]], 0.1).is_err());
    }
}
