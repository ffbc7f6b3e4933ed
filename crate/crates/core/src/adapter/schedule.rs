use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::nn::Tensor;
use crate::rng::{normal, StreamRng};

/// Linear-beta DDPM noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<(), AdapterError> {
        let ok = self.steps >= 2 && 0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0;
        if !ok {
            return Err(AdapterError::Config(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta_start + (self.beta_end - self.beta_start) * t as f64 / (self.steps - 1) as f64
    }

    /// `alpha_bar[t] = prod_{s <= t} (1 - beta_s)`.
    pub fn alpha_bars(&self) -> Vec<f64> {
        let mut acc = 1.0;
        (0..self.steps)
            .map(|t| {
                acc *= 1.0 - self.beta(t);
                acc
            })
            .collect()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        (0..=t).map(|s| 1.0 - self.beta(s)).product()
    }

    pub fn check_t(&self, t: usize) -> Result<(), AdapterError> {
        if t >= self.steps {
            return Err(AdapterError::Timestep { t, steps: self.steps });
        }
        Ok(())
    }

    /// First timestep of blended-noise sampling: `round(strength * (T - 1))`.
    pub fn blended_start(&self, strength: f64) -> Result<usize, AdapterError> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(AdapterError::Config(format!("strength must be in [0, 1], got {strength}")));
        }
        Ok((strength * (self.steps - 1) as f64).round() as usize)
    }
}

/// Noise for a batch `(n, c, ...)`: white noise plus `offset_weight` times a
/// per-item, per-channel constant.
pub fn sample_noise(shape: &[usize], offset_weight: f64, rng: &mut StreamRng) -> Tensor {
    let mut eps = Tensor::randn(shape, rng);
    if offset_weight != 0.0 && shape.len() >= 2 {
        let inner: usize = shape[2..].iter().product();
        for chunk in eps.data_mut().chunks_mut(inner.max(1)) {
            let shift = offset_weight * normal(rng);
            chunk.iter_mut().for_each(|v| *v += shift);
        }
    }
    eps
}

/// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`, with one timestep per item
/// of the leading axis. Returns `(z_t, eps)`.
pub fn add_noise(
    z0: &Tensor,
    ts: &[usize],
    schedule: &DiffusionSchedule,
    offset_weight: f64,
    rng: &mut StreamRng,
) -> Result<(Tensor, Tensor), AdapterError> {
    let n = z0.shape().first().copied().unwrap_or(0);
    if ts.len() != n {
        return Err(AdapterError::Config(format!("{} timesteps for {n} items", ts.len())));
    }
    for &t in ts {
        schedule.check_t(t)?;
    }
    let eps = sample_noise(z0.shape(), offset_weight, rng);
    Ok((noised(z0, &eps, ts, schedule), eps))
}

/// Deterministic part of [`add_noise`] for a given `eps`.
pub fn noised(z0: &Tensor, eps: &Tensor, ts: &[usize], schedule: &DiffusionSchedule) -> Tensor {
    let inner = z0.len() / ts.len().max(1);
    let mut zt = z0.clone();
    for (i, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let range = i * inner..(i + 1) * inner;
        for (z, e) in zt.data_mut()[range.clone()].iter_mut().zip(&eps.data()[range]) {
            *z = a * *z + b * e;
        }
    }
    zt
}

/// Sinusoidal embedding of a timestep: `[sin(t f_k), cos(t f_k)]` with
/// `f_k = 10000^(-k / (dim/2))`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let f = (-(k as f64) / half as f64 * 10000f64.ln()).exp();
        out[k] = (t as f64 * f).sin();
        out[half + k] = (t as f64 * f).cos();
    }
    out
}
