use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Cosine annealing from `base` down to `base * floor_frac` over `horizon`
/// steps, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base: f64,
    pub floor_frac: f64,
    pub horizon: usize,
}

impl CosineSchedule {
    pub fn new(base: f64, horizon: usize) -> Self {
        Self { base, floor_frac: 0.01, horizon }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let floor = self.base * self.floor_frac;
        if self.horizon == 0 {
            return self.base;
        }
        let p = step.min(self.horizon) as f64 / self.horizon as f64;
        floor + (self.base - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> Result<f64> {
    let sq: f64 = grads.iter().flatten().flat_map(|t| t.data()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient norm {norm}")));
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update. Parameters with `trainable[i] == false` or
    /// without a gradient are left untouched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], trainable: &[bool], lr: f64) -> Result<()> {
        if grads.len() != store.len() || trainable.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape("optimizer state does not match parameter store"));
        }
        if let Some(t) = grads.iter().flatten().find(|t| !t.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient of shape {:?}", t.shape())));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let Some(g) = &grads[i] else { continue };
            if !trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn cosine_starts_at_base_and_ends_at_floor() {
        let s = CosineSchedule::new(6e-4, 100);
        assert_eq!(s.lr(0), 6e-4);
        assert!((s.lr(100) - 6e-6).abs() < 1e-18);
        assert!((s.lr(50) - (6e-6 + (6e-4 - 6e-6) * 0.5)).abs() < 1e-15);
        assert_eq!(s.lr(500), s.lr(100));
        for k in 0..100 {
            assert!(s.lr(k + 1) <= s.lr(k));
        }
    }

    #[test]
    fn small_gradients_pass_clipping_unchanged() {
        let mut g = vec![Some(Tensor::new(vec![2], vec![0.3, 0.4]).unwrap()), None];
        let before = g.clone();
        let n = clip_global_norm(&mut g, 1.0).unwrap();
        assert!((n - 0.5).abs() < 1e-15);
        assert_eq!(g, before);
    }

    #[test]
    fn large_gradients_are_rescaled_to_unit_norm() {
        let mut g = vec![Some(Tensor::new(vec![2], vec![3.0, 0.0]).unwrap()), Some(Tensor::new(vec![1], vec![4.0]).unwrap())];
        clip_global_norm(&mut g, 1.0).unwrap();
        let sq: f64 = g.iter().flatten().flat_map(|t| t.data()).map(|v| v * v).sum();
        assert!((sq.sqrt() - 1.0).abs() < 1e-12);
        assert!((g[0].as_ref().unwrap().data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut g = vec![Some(Tensor::new(vec![1], vec![f64::NAN]).unwrap())];
        assert!(clip_global_norm(&mut g, 1.0).unwrap_err().is_numeric());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::scalar(0.0)).unwrap();
        let mut adam = Adam::new(&store);
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::new(&store);
                let p = g.param(theta);
                let loss = g.mse(p, Tensor::scalar(3.0)).unwrap();
                g.backward(loss).unwrap().into_params()
            };
            adam.update(&mut store, &grads, &[true], 0.05).unwrap();
        }
        assert!((store.get(theta).data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0)).unwrap();
        store.add("b", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&store);
        let grads = vec![Some(Tensor::scalar(1.0)), Some(Tensor::scalar(1.0))];
        adam.update(&mut store, &grads, &[false, true], 0.1).unwrap();
        assert_eq!(store.get(a).data()[0], 1.0);
        assert!(store.get(store.id("b").unwrap()).data()[0] < 1.0);
    }
}
