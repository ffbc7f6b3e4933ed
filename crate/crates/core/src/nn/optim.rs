use std::collections::HashMap;

use super::{Gradients, ParamId, ParamStore};

/// Adam with optional decoupled weight decay (AdamW).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, step: 0, moments: HashMap::new() }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self { weight_decay, ..Self::new(lr) }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments.get(&id).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update of every non-frozen parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut ids: Vec<ParamId> = grads.params().map(|(id, _)| id).collect();
        ids.sort();
        for id in ids {
            if store.get(id).frozen {
                continue;
            }
            let g = grads.param(id).expect("listed above").data();
            let n = g.len();
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let p = store.tensor_mut(id).data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if self.weight_decay != 0.0 {
                    p[i] -= self.lr * self.weight_decay * p[i];
                }
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Drops moment estimates, e.g. when parameters are re-initialized.
    pub fn reset(&mut self) {
        self.step = 0;
        self.moments.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id).unwrap();
        let loss = g.sum(w).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(&mut store, &grads);
        let p = store.tensor(id).data();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 2.1).abs() < 1e-6);
        let (m, v) = opt.moments(id).unwrap();
        assert_eq!((m.len(), v.len()), (2, 2));
    }

    #[test]
    fn adamw_decays_with_zero_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[1], vec![2.0]).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id).unwrap();
        let z = g.scale(w, 0.0).unwrap();
        let loss = g.sum(z).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut opt = Adam::adamw(0.1, 0.5);
        opt.step(&mut store, &grads);
        assert!((store.tensor(id).data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::ones(&[3]));
        let b = store.add("b", Tensor::ones(&[3]));
        store.set_frozen(b, true);
        let before = store.tensor(b).clone();
        let mut g = Graph::new();
        let (va, vb) = (g.param(&store, a).unwrap(), g.param(&store, b).unwrap());
        let p = g.mul(va, vb).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.param(b).is_none());
        Adam::adamw(0.01, 0.01).step(&mut store, &grads);
        assert_eq!(store.tensor(b), &before);
        assert_ne!(store.tensor(a), &before);
    }
}
