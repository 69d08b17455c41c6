use serde::{Deserialize, Serialize};

use crate::tensor::{ParamGrads, ParamKind, ParamStore};
use crate::{Error, Result};

/// AdamW hyperparameters with a linear-warmup, cosine-to-zero schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSpec {
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to matrices only (not gains or embeddings).
    pub weight_decay: f64,
    /// Global gradient-norm clip threshold.
    pub grad_clip: f64,
}

impl Default for OptimSpec {
    fn default() -> Self {
        OptimSpec {
            lr_peak: 4e-4,
            warmup_steps: 2000,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }
}

impl OptimSpec {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        let positive = [("lr_peak", self.lr_peak), ("eps", self.eps), ("grad_clip", self.grad_clip)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if total_steps > 0 && self.warmup_steps >= total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total steps {total_steps}",
                self.warmup_steps
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step`: linear from 0 to the peak over the warmup, then a
/// cosine decay reaching 0 at `total_steps`.
pub fn lr_at(step: usize, spec: &OptimSpec, total_steps: usize) -> f64 {
    let step = step.min(total_steps);
    if step < spec.warmup_steps {
        return spec.lr_peak * step as f64 / spec.warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(spec.warmup_steps);
    if span == 0 {
        return spec.lr_peak;
    }
    let t = (step - spec.warmup_steps) as f64 / span as f64;
    spec.lr_peak * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

/// First and second moments per parameter, plus the number of applied updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor the gradients were multiplied by (1 when below the threshold).
    pub clip_scale: f64,
    /// The update was not applied because a gradient was non-finite.
    pub skipped: bool,
}

/// Scale `grads` so their global norm is at most `clip`; returns `(norm, scale)`.
pub fn clip_grads(grads: &mut ParamGrads, clip: f64) -> (f64, f64) {
    let norm = grads.global_norm();
    let scale = if norm > clip { clip / norm } else { 1.0 };
    if scale != 1.0 {
        grads.scale(scale);
    }
    (norm, scale)
}

/// One AdamW update with bias correction. Gradients are clipped first; a
/// parameter without a gradient is treated as having a zero gradient.
pub fn adamw_step(params: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, spec: &OptimSpec, lr: f64) -> StepOutcome {
    if !grads.all_finite() {
        return StepOutcome {
            grad_norm: f64::NAN,
            clip_scale: 1.0,
            skipped: true,
        };
    }
    let mut grads = grads.clone();
    let (grad_norm, clip_scale) = clip_grads(&mut grads, spec.grad_clip);
    state.t += 1;
    let bc1 = 1.0 - spec.beta1.powi(state.t as i32);
    let bc2 = 1.0 - spec.beta2.powi(state.t as i32);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let decay = if params.kind(id) == ParamKind::Matrix { spec.weight_decay } else { 0.0 };
        let g = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = &mut params.value_mut(id).data;
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data[i]);
            m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * gi;
            v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * gi * gi;
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + spec.eps);
            p[i] -= lr * (update + decay * p[i]);
        }
    }
    StepOutcome {
        grad_norm,
        clip_scale,
        skipped: false,
    }
}
