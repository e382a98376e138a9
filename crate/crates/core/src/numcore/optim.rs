use serde::{Deserialize, Serialize};

use super::{GradStore, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub hyper: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(hyper: AdamWConfig, params: &ParamStore) -> Self {
        let m = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        let v = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self { hyper, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    /// Restores optimizer state (e.g. from a checkpoint).
    pub fn restore(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One update at learning rate `lr` (the configured rate unless scheduled).
    /// Parameters without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) {
        self.step += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let p = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * (mhat / (vhat.sqrt() + h.eps) + h.weight_decay * p[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut params = scalar_store(1.5);
        let hyper = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(hyper, &params);
        let grads = GradStore::new(&params);
        opt.step(&mut params, &grads, hyper.lr);
        assert_eq!(params.get(params.id_of("w").unwrap()).item(), 1.5);
    }

    #[test]
    fn unit_gradient_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = lr / (1 + ε).
        let mut params = scalar_store(2.0);
        let hyper = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(hyper, &params);
        let mut grads = GradStore::new(&params);
        let id = params.id_of("w").unwrap();
        grads.accumulate(id, &[1.0], 1.0);
        opt.step(&mut params, &grads, hyper.lr);
        let want = 2.0 - 1e-3 / (1.0 + 1e-8);
        assert!((params.get(id).item() - want).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks_by_lr_wd_param() {
        let mut params = scalar_store(4.0);
        let hyper = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(hyper, &params);
        let grads = GradStore::new(&params);
        opt.step(&mut params, &grads, hyper.lr);
        let id = params.id_of("w").unwrap();
        assert!((params.get(id).item() - (4.0 - 0.1 * 0.5 * 4.0)).abs() < 1e-15);
    }
}
