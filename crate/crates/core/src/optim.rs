//! AdamW with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every entry of a [`ParamStore`] (buffers keep empty slots).
#[derive(Clone, Debug)]
pub struct AdamW<F: Real = f64> {
    pub config: AdamWConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Real> AdamW<F> {
    pub fn new(store: &ParamStore<F>, config: AdamWConfig) -> Self {
        let zeros = |store: &ParamStore<F>| {
            store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(store),
            v: zeros(store),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the store's gradient slots, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (lr, wd, eps) = (F::lit(c.lr), F::lit(c.weight_decay), F::lit(c.eps));
        let (bc1, bc2) = (F::lit(bc1), F::lit(bc2));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            if self.m[i].shape() != store.value(id).shape() {
                return Err(Error::shape("adamw", self.m[i].shape(), store.value(id).shape()));
            }
            let (value, grad) = store.value_and_grad_mut(id);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * wd * *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = scalar_store(0.7);
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..10 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.value(id).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        let mut opt = AdamW::new(&s, AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
        s.accumulate_grad(id, &Tensor::scalar(1.0));
        opt.step(&mut s).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
        assert_eq!(s.grad(id).item(), 0.0, "gradients are zeroed");
    }

    #[test]
    fn constant_gradient_descends() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        for _ in 0..50 {
            s.accumulate_grad(id, &Tensor::scalar(-2.0));
            opt.step(&mut s).unwrap();
        }
        assert!(s.value(id).item() > 1.0);
    }

    #[test]
    fn decay_is_decoupled() {
        let (mut s, id) = scalar_store(2.0);
        let mut opt = AdamW::new(&s, AdamWConfig { lr: 0.5, weight_decay: 0.1, ..Default::default() });
        opt.step(&mut s).unwrap();
        assert!((s.value(id).item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn buffers_are_untouched_and_mismatch_detected() {
        let mut s = ParamStore::<f64>::new();
        let b = s.add_buffer("running", Tensor::ones(&[2])).unwrap();
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(b).data(), &[1.0, 1.0]);
        s.add("late", Tensor::zeros(&[1])).unwrap();
        assert!(opt.step(&mut s).is_err());
    }
}
