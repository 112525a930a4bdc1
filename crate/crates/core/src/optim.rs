//! AdamW with decoupled weight decay.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::ParamSpec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(config_err!("eps must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Optimizer state aligned with a parameter table; buffers stay untouched.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, specs: &[ParamSpec]) -> Result<Self> {
        cfg.validate()?;
        let moments = || specs.iter().map(|s| s.trainable.then(|| Tensor::zeros(s.shape))).collect();
        Ok(Self { cfg, step: 0, m: moments(), v: moments() })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; parameters are rounded to `f32` afterwards.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(config_err!("optimizer built for {} tensors, got {}", self.m.len(), params.len()));
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.cfg;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (i, p) in params.iter_mut().enumerate() {
            let (Some(m), Some(v), Some(g)) = (self.m[i].as_mut(), self.v[i].as_mut(), grads[i].as_ref()) else {
                continue;
            };
            for (((pv, mv), vv), &gv) in
                p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let update = (*mv / c1) / (libm::sqrt(*vv / c2) + eps);
                *pv = (*pv - lr * (update + weight_decay * *pv)) as f32 as f64;
            }
        }
        Ok(())
    }
}
