use serde::{Deserialize, Serialize};

use crate::model::Params;
use crate::tensor::Tensor;

/// Linear warmup to `base`, then exponential decay with the given half-life.
pub fn lr_schedule(step: usize, base: f64, warmup: usize, half_life: usize) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    if half_life == 0 {
        return base;
    }
    base * 0.5f64.powf((step - warmup) as f64 / half_life as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &Params<f32>, cfg: AdamWConfig) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params<f32>, grads: &[Tensor<f32>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((x, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi as f64 / bc1;
                let vhat = *vi as f64 / bc2;
                *x = *x * decay - (lr * mhat / (vhat.sqrt() + c.eps)) as f32;
            }
        }
    }
}
