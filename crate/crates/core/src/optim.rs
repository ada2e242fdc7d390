//! AdamW with decoupled weight decay and a constant learning rate.

use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, Matrix, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        for (id, grad) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let (rows, cols) = grad.shape();
            let m = self.m[i].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v[i].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let value = store.get_mut(id);
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::from_vec(1, 2, vec![1.0, -2.0]));
        let grads = {
            let mut g = Graph::new(&store);
            let w = g.param(id);
            let ones = g.constant(Matrix::filled(1, 2, 1.0));
            let l = g.matmul_t(w, ones);
            g.backward(l)
        };
        let config = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(config);
        opt.step(&mut store, &grads);
        // m_hat / sqrt(v_hat) = sign(g) on the first step
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 2.1).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::from_vec(1, 3, vec![3.0, -1.0, 0.5]));
        let mut opt = AdamW::new(AdamWConfig {
            learning_rate: 0.05,
            ..Default::default()
        });
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&store);
                let w = g.param(id);
                let sq = g.matmul_t(w, w);
                g.backward(sq)
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(id).norm() < 0.05);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let a = store.add("encoder.w", Matrix::filled(1, 1, 1.0));
        let b = store.add("heads.w", Matrix::filled(1, 1, 1.0));
        store.set_trainable("encoder.", false);
        let grads = {
            let mut g = Graph::new(&store);
            let (va, vb) = (g.param(a), g.param(b));
            let l = g.sum(&[va, vb]);
            g.backward(l)
        };
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut store, &grads);
        assert_eq!(store.get(a).item(), 1.0);
        assert!(store.get(b).item() < 1.0);
    }
}
