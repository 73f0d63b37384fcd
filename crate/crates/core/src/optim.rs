//! Adaptive moment estimation with global gradient-norm clipping.

use crate::autodiff::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients with a larger global norm are rescaled to this norm.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(10.0), step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        let norm = store.grad_norm();
        if let Some(max) = self.clip_norm {
            if norm > max {
                store.scale_grads(max / norm);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.data().to_vec();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        norm
    }
}
