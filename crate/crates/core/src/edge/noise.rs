use serde::{Deserialize, Serialize};

use super::{EdgeError, Plane};
use crate::rng::{mix, splitmix64};

/// Parameters of the octave-summed value noise used as a spatial gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub octaves: u32,
    pub persistence: f64,
    /// Lattice spacing of the first octave, in pixels.
    pub base_scale: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { octaves: 4, persistence: 0.5, base_scale: 32.0, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), EdgeError> {
        if self.octaves < 1 {
            return Err(EdgeError::InvalidNoise("octaves must be >= 1"));
        }
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(EdgeError::InvalidNoise("persistence must be in (0, 1]"));
        }
        if !(self.base_scale.is_finite() && self.base_scale > 0.0) {
            return Err(EdgeError::InvalidNoise("base scale must be positive"));
        }
        Ok(())
    }
}

fn lattice(seed: u64, octave: u32, ix: u64, iy: u64) -> f64 {
    let h = splitmix64(mix(mix(seed, octave as u64), (ix << 32) ^ iy));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Value noise: bilinearly interpolated seeded lattices, one per octave with
/// halving spacing, summed with amplitude `persistence^o`, then min-max
/// stretched to `[0, 1]`. A constant field maps to 0.5.
pub fn fractal_noise(width: usize, height: usize, spec: &NoiseSpec) -> Result<Plane, EdgeError> {
    spec.validate()?;
    let mut out = Plane::new(width, height, 0.0);
    let mut amp = 1.0;
    for o in 0..spec.octaves {
        let cell = (spec.base_scale / (1u64 << o.min(62)) as f64).max(1.0);
        for y in 0..height {
            let fy = y as f64 / cell;
            let iy = fy.floor();
            let ty = fy - iy;
            for x in 0..width {
                let fx = x as f64 / cell;
                let ix = fx.floor();
                let tx = fx - ix;
                let (ix, iy) = (ix as u64, iy as u64);
                let v00 = lattice(spec.seed, o, ix, iy);
                let v10 = lattice(spec.seed, o, ix + 1, iy);
                let v01 = lattice(spec.seed, o, ix, iy + 1);
                let v11 = lattice(spec.seed, o, ix + 1, iy + 1);
                let top = v00 + (v10 - v00) * tx;
                let bottom = v01 + (v11 - v01) * tx;
                let i = y * width + x;
                out.data_mut()[i] += amp * (top + (bottom - top) * ty);
            }
        }
        amp *= spec.persistence;
    }
    let (lo, hi) = out.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    for v in out.data_mut() {
        *v = if span > 1e-12 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
    }
    Ok(out)
}
