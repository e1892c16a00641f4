use serde::{Deserialize, Serialize};

use super::layer::LinearLayer;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay_rho: f64,
    pub epsilon: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay_rho: 0.9,
            epsilon: 1e-8,
            lr_decay_factor: 0.1,
            lr_decay_every: 50_000,
        }
    }
}

impl RmsPropConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.decay_rho > 0.0 && self.decay_rho < 1.0) {
            return Err(Error::Param(format!("decay_rho must lie in (0, 1), got {}", self.decay_rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Param(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Param(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Param("lr_decay_every must be positive".into()));
        }
        Ok(())
    }

    /// `learning_rate × lr_decay_factor^⌊t / lr_decay_every⌋`
    pub fn effective_lr(&self, iteration: u64) -> f64 {
        let steps = (iteration / self.lr_decay_every.max(1)) as i32;
        self.learning_rate * self.lr_decay_factor.powi(steps)
    }
}

fn update(param: &mut [f64], grad: &mut [f64], cache: &mut [f64], rho: f64, eps: f64, lr: f64) {
    for ((p, g), c) in param.iter_mut().zip(grad.iter_mut()).zip(cache.iter_mut()) {
        *c = rho * *c + (1.0 - rho) * *g * *g;
        *p -= lr * *g / (c.sqrt() + eps);
        *g = 0.0;
    }
}

/// One RMSProp update of `layer` from its accumulated gradients, which are
/// zeroed afterwards.
pub fn rmsprop_step(layer: &mut LinearLayer, cfg: &RmsPropConfig, iteration: u64) {
    let lr = cfg.effective_lr(iteration);
    let (rho, eps) = (cfg.decay_rho, cfg.epsilon);
    update(
        layer.w.as_mut_slice(),
        layer.grad_w.as_mut_slice(),
        layer.rms_cache_w.as_mut_slice(),
        rho,
        eps,
        lr,
    );
    if layer.has_bias() {
        update(
            layer.b.as_mut_slice(),
            layer.grad_b.as_mut_slice(),
            layer.rms_cache_b.as_mut_slice(),
            rho,
            eps,
            lr,
        );
    } else {
        layer.grad_b.fill(0.0);
    }
}
