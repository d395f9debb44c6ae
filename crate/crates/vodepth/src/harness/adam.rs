//! Adam optimizer over a parameter store.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam state: first/second moment per parameter plus the step counter.
/// A parameter whose gradient is exactly zero on every step keeps moments of
/// exactly zero, so its value never changes by even one bit.
pub struct Adam<T: Scalar> {
    lr: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |store: &ParamStore<T>| {
            store
                .ids()
                .map(|id| Tensor::zeros(store.get(id).value.shape()))
                .collect()
        };
        Adam {
            lr,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment tensors in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Overwrites the optimizer state (used when restoring a checkpoint).
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One update from the gradients accumulated in the store.
    pub fn apply(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        self.step += 1;
        let b1 = T::from_f64(ADAM_BETA1);
        let b2 = T::from_f64(ADAM_BETA2);
        let one_minus_b1 = T::from_f64(1.0 - ADAM_BETA1);
        let one_minus_b2 = T::from_f64(1.0 - ADAM_BETA2);
        let eps = T::from_f64(ADAM_EPS);
        let corr1 = T::from_f64(1.0 - ADAM_BETA1.powi(self.step as i32));
        let corr2 = T::from_f64(1.0 - ADAM_BETA2.powi(self.step as i32));
        let lr = T::from_f64(self.lr);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let grad = p.gradient.data();
            for (j, value) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_minus_b1 * g;
                v[j] = b2 * v[j] + one_minus_b2 * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *value = *value - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
