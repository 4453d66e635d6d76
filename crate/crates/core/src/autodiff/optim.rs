use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.005,
        }
    }
}

/// Adam with decoupled weight decay over the trainable entries of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |_| store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update from the store's gradient buffers. Non-finite gradients
    /// abort the step and leave parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("adam", format!("state for {} parameters, store has {}", self.m.len(), store.len())));
        }
        for id in store.ids() {
            if self.m[id.0].len() != store.value(id).numel() {
                return Err(Error::shape("adam", format!("moment size for {}", store.name(id))));
            }
            if store.is_trainable(id) && !store.grad(id).is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let g = store.grad(id).data.clone();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = &mut store.value_mut(id).data;
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.lr * c.weight_decay * p[i];
                p[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base · factor^((epoch - 1) / every)` for 1-based epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            factor: 0.5,
            every: 5,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = epoch.saturating_sub(1) / self.every.max(1);
        self.base * self.factor.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store_with(v: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(&[v.len()], v.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store_with(&[1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &s);
        for _ in 0..10 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.value(s.id("p").unwrap()).data, [1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let mut s = store_with(&[0.0]);
        let id = s.id("p").unwrap();
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &s);
        let mut prev = 0.0;
        for _ in 0..500 {
            s.grad_mut(id).data[0] = 3.0;
            adam.step(&mut s).unwrap();
            let now = s.value(id).data[0];
            assert!(((prev - now) - 1e-3).abs() < 1e-9);
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_refuses_step() {
        let mut s = store_with(&[1.0]);
        let id = s.id("p").unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        s.grad_mut(id).data[0] = f64::NAN;
        assert!(matches!(adam.step(&mut s), Err(Error::NonFinite(_))));
        assert_eq!(s.value(id).data[0], 1.0);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [3.0, -1.5, 0.25];
        let mut s = store_with(&[0.0, 0.0, 0.0]);
        let id = s.id("p").unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() }, &s);
        let loss = |s: &ParamStore| s.value(id).data.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        let mut steps = 0;
        while loss(&s) >= 1e-6 && steps < 2000 {
            let g: Vec<f64> = s.value(id).data.iter().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
            s.grad_mut(id).data.copy_from_slice(&g);
            adam.step(&mut s).unwrap();
            steps += 1;
        }
        assert!(loss(&s) < 1e-6, "loss {} after {steps}", loss(&s));
    }

    #[test]
    fn schedule_halves_every_five_epochs() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(1), 1e-3);
        assert_eq!(s.lr(5), 1e-3);
        assert_eq!(s.lr(6), 5e-4);
        assert_eq!(s.lr(11), 1e-3 * 0.25);
    }
}
