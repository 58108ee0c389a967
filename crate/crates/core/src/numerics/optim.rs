use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};

/// Plain SGD with a per-epoch multiplicative learning-rate decay and
/// optional L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub decay: f64,
    pub weight_decay: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Self {
            lr: 0.01,
            decay: 0.95,
            weight_decay: 0.0,
        }
    }
}

impl Sgd {
    pub fn new(lr: f64, decay: f64) -> Self {
        Self {
            lr,
            decay,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch as i32)
    }

    /// `p ← p − lr_epoch·(grad + wd·p)` for every trainable parameter with a
    /// gradient, then zeroes all gradients.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, epoch: usize) {
        let lr = T::of(self.lr_at(epoch));
        let wd = T::of(self.weight_decay);
        for p in store.iter_mut().filter(|p| p.trainable) {
            if p.value.grad().is_none() {
                continue;
            }
            let (vals, grads) = p.value.value_and_grad_mut();
            for (v, g) in vals.iter_mut().zip(grads.iter_mut()) {
                *v = *v - lr * (*g + wd * *v);
                *g = T::zero();
            }
        }
        store.zero_grads();
    }
}
