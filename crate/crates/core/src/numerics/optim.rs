use serde::{Deserialize, Serialize};

use super::{Matrix, ParameterStore};
use crate::error::{Error, Result};

/// Linear warmup from `warmup_start` to `peak`, then cosine decay to `floor`
/// at `total_steps`. Steps past `total_steps` stay at `floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub warmup_start: f64,
    pub peak: f64,
    pub floor: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Default for Schedule {
    /// Pretraining schedule of the full-scale recipe (80k steps, 9k warmup).
    fn default() -> Self {
        Self {
            warmup_start: 1e-6,
            peak: 3e-5,
            floor: 1e-5,
            warmup_steps: 9_000,
            total_steps: 80_000,
        }
    }
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            return self.warmup_start + (self.peak - self.warmup_start) * frac;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.warmup_start, self.peak, self.floor]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok {
            return Err(Error::InvalidArgument(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moment estimates and step counter for [`AdamW`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step: usize,
    first: Vec<Matrix<f32>>,
    second: Vec<Matrix<f32>>,
}

impl OptimizerState {
    pub fn new(store: &ParameterStore<f32>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

/// Decoupled-weight-decay Adam. Norm gains, norm shifts and biases are not
/// decayed.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub schedule: Schedule,
}

fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta"))
}

impl AdamW {
    pub fn new(config: AdamWConfig, schedule: Schedule) -> Self {
        Self { config, schedule }
    }

    /// Applies one update using the accumulated gradients and returns the
    /// learning rate used. Gradients are left in place.
    pub fn step(&self, store: &mut ParameterStore<f32>, state: &mut OptimizerState) -> Result<f64> {
        if state.first.len() != store.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameter store".into(),
            ));
        }
        if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
        let lr = self.schedule.lr(state.step);
        state.step += 1;
        let t = state.step as i32;
        let c = &self.config;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = c.eps as f32;
        let lr32 = lr as f32;
        let wd = c.weight_decay as f32;
        for (i, p) in store.iter_mut().enumerate() {
            let decay = if decays(&p.name) { wd } else { 0.0 };
            let m = state.first[i].as_mut_slice();
            let v = state.second[i].as_mut_slice();
            let g = p.grad.as_slice();
            for (k, w) in p.value.as_mut_slice().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let denom = v[k].sqrt() / bc2_sqrt + eps;
                *w -= lr32 * decay * *w;
                *w -= step_size * m[k] / denom;
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(lr)
    }
}
