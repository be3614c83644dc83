//! AdamW with decoupled weight decay and the warmup / plateau / cosine
//! learning-rate schedule.

use maskhoi_core::{Error, Result};

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Fraction of training after which the cosine decay starts.
pub const DECAY_KNOT: f64 = 0.72;

/// Linear ramp from 0 over `warmup` steps, constant until
/// `DECAY_KNOT·total`, then half-cosine down to 0 at `total`.
pub fn lr_schedule(step: u64, total: u64, base_lr: f64, warmup: u64) -> f64 {
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let knot = DECAY_KNOT * total as f64;
    let s = step as f64;
    if s <= knot {
        return base_lr;
    }
    if step >= total {
        return 0.0;
    }
    let frac = (s - knot) / (total as f64 - knot);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// First and second moments per parameter and the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.entries.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

impl AdamW {
    /// One update. Decay `lr·wd·θ` applies only to parameters flagged for it.
    /// Parameters and moments are rounded to `f32` afterwards so a saved
    /// checkpoint restores the exact state.
    pub fn step(&self, params: &mut ParamStore, state: &mut AdamState, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || state.m.len() != params.len() {
            return Err(Error::InvalidShape(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                state.m.len(),
                params.len()
            )));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.entries.iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.value.shape() {
                return Err(Error::InvalidShape(format!("gradient shape {:?} for {}", g.shape(), p.name)));
            }
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut state.m[i].data, &mut state.v[i].data);
            for (k, x) in p.value.data.iter_mut().enumerate() {
                let gk = g.data[k];
                m[k] = (self.beta1 * m[k] + (1.0 - self.beta1) * gk) as f32 as f64;
                v[k] = (self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk) as f32 as f64;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *x = (*x - lr * (update + decay * *x)) as f32 as f64;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_knots() {
        assert_eq!(lr_schedule(0, 2000, 5e-4, 100), 0.0);
        assert_eq!(lr_schedule(100, 2000, 5e-4, 100), 5e-4);
        assert_eq!(lr_schedule(1440, 2000, 5e-4, 100), 5e-4);
        assert!(lr_schedule(1441, 2000, 5e-4, 100) < 5e-4);
        assert!(lr_schedule(2000, 2000, 5e-4, 100).abs() < 1e-12);
        assert!((lr_schedule(1720, 2000, 1.0, 100) - 0.5).abs() < 1e-12);
    }
}
