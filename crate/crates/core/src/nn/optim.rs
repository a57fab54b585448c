//! AdamW with decoupled weight decay.

use ndarray::Array2;

use crate::nn::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig { lr, ..Default::default() }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Array2<f64>> =
            params.entries().iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
        AdamW { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update: `p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p)`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        assert_eq!(params.entries().len(), grads.entries().len(), "grad set mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for (k, ((name, p), (gname, g))) in
            params.entries_mut().iter_mut().zip(grads.entries().iter()).enumerate()
        {
            assert_eq!(name, gname, "grad set mismatch");
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
            });
            ndarray::Zip::from(&mut *p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= self.cfg.lr * (mhat / (vhat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *p);
            });
        }
    }
}
