//! Warmup-cosine learning rate and momentum SGD.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensornet::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, peak_lr: f64, warmup_fraction: f64, total_steps: usize) -> Result<Self> {
        let s = Self { base_lr, peak_lr, warmup_fraction, total_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr < self.peak_lr && self.peak_lr.is_finite()) {
            return invalid(format!("need 0 < base_lr < peak_lr, got {} and {}", self.base_lr, self.peak_lr));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return invalid(format!("warmup fraction must lie in (0, 1), got {}", self.warmup_fraction));
        }
        if self.total_steps == 0 {
            return invalid("total_steps must be >= 1");
        }
        Ok(())
    }

    /// `round(warmup_fraction · total_steps)`, kept within `[1, total_steps]`.
    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.total_steps as f64).round() as usize).clamp(1, self.total_steps)
    }

    /// Linear from `base_lr` to `peak_lr` over the warmup, then cosine decay
    /// `peak · ½(1 + cos(π(s − w)/(T − w)))`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return invalid(format!("step {step} outside [0, {})", self.total_steps));
        }
        let w = self.warmup_steps();
        if step < w {
            return Ok(self.base_lr + (self.peak_lr - self.base_lr) * step as f64 / w as f64);
        }
        let t = (step - w) as f64 / (self.total_steps - w) as f64;
        Ok(self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { momentum: 0.9, weight_decay: 1e-7 }
    }
}

/// `v ← μv + g + λp; p ← p − lr·v` for every unfrozen parameter, using the
/// gradients held in the set. Nothing is updated if any gradient is non-finite.
pub fn sgd_update<T: Scalar>(params: &mut ParamSet<T>, lr: f64, cfg: &SgdConfig) -> Result<()> {
    for p in params.iter().filter(|p| !p.frozen) {
        if !p.grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NumericFault(format!("non-finite gradient in {}", p.name)));
        }
    }
    let (mu, wd, lr) = (T::lit(cfg.momentum), T::lit(cfg.weight_decay), T::lit(lr));
    for p in params.iter_mut().filter(|p| !p.frozen) {
        for ((v, m), &g) in p.value.iter_mut().zip(p.momentum.iter_mut()).zip(&p.grad) {
            *m = mu * *m + g + wd * *v;
            *v -= lr * *m;
        }
    }
    Ok(())
}
