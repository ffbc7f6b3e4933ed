//! Lossless space-to-depth latent codec and the two-frame layout.

use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::nn::{Graph, NnError, Tensor, Var};
use crate::rgba::RgbaImage;

/// Folds each `p x p` patch of a `c`-channel image into `c * p * p`
/// channels. Channel `c * p^2 + dy * p + dx` of latent pixel `(y, x)` is
/// image pixel `(p*y + dy, p*x + dx)` of channel `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentCodec {
    pub patch: usize,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self { patch: 4 }
    }
}

impl LatentCodec {
    pub fn new(patch: usize) -> Result<Self, AdapterError> {
        if patch == 0 {
            return Err(AdapterError::Config("codec patch factor must be positive".into()));
        }
        Ok(Self { patch })
    }

    pub fn latent_channels(&self, image_channels: usize) -> usize {
        image_channels * self.patch * self.patch
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<(), AdapterError> {
        if !width.is_multiple_of(self.patch) || !height.is_multiple_of(self.patch) || width == 0 || height == 0 {
            return Err(AdapterError::Config(format!(
                "image {width}x{height} is not a positive multiple of the codec patch {}",
                self.patch
            )));
        }
        Ok(())
    }

    /// Planar `(c, h, w)` values to a `(c p^2, h/p, w/p)` latent.
    pub fn encode(&self, data: &[f64], channels: usize, height: usize, width: usize) -> Result<Tensor, AdapterError> {
        self.check_dims(width, height)?;
        if data.len() != channels * height * width {
            return Err(NnError::Shape(format!("codec input holds {} values", data.len())).into());
        }
        let p = self.patch;
        let (lh, lw) = (height / p, width / p);
        let mut out = vec![0.0; data.len()];
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let lc = c * p * p + (y % p) * p + x % p;
                    out[(lc * lh + y / p) * lw + x / p] = data[(c * height + y) * width + x];
                }
            }
        }
        Ok(Tensor::new(&[channels * p * p, lh, lw], out)?)
    }

    /// Inverse of [`encode`](Self::encode): returns planar values and `(c, h, w)`.
    pub fn decode(&self, latent: &Tensor) -> Result<(Vec<f64>, [usize; 3]), AdapterError> {
        let s = latent.shape();
        let p = self.patch;
        if s.len() != 3 || !s[0].is_multiple_of(p * p) {
            return Err(NnError::Shape(format!("latent {s:?} for patch {p}")).into());
        }
        let (channels, lh, lw) = (s[0] / (p * p), s[1], s[2]);
        let (height, width) = (lh * p, lw * p);
        let src = latent.data();
        let mut out = vec![0.0; src.len()];
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let lc = c * p * p + (y % p) * p + x % p;
                    out[(c * height + y) * width + x] = src[(lc * lh + y / p) * lw + x / p];
                }
            }
        }
        Ok((out, [channels, height, width]))
    }

    pub fn encode_rgb(&self, img: &RgbaImage) -> Result<Tensor, AdapterError> {
        self.encode(img.rgb(), 3, img.height(), img.width())
    }

    /// Alpha replicated to three channels, as if it were an image.
    pub fn encode_alpha(&self, img: &RgbaImage) -> Result<Tensor, AdapterError> {
        let a = img.alpha();
        let rep: Vec<f64> = a.iter().chain(a).chain(a).copied().collect();
        self.encode(&rep, 3, img.height(), img.width())
    }
}

fn check_inflatable(s: &[usize]) -> Result<(), AdapterError> {
    if s.len() != 4 || !s[0].is_multiple_of(2) {
        return Err(AdapterError::Frames(format!("cannot inflate shape {s:?}: need (2b, c, h, w)")));
    }
    Ok(())
}

fn check_deflatable(s: &[usize]) -> Result<(), AdapterError> {
    if s.len() != 5 || s[2] != 2 {
        return Err(AdapterError::Frames(format!("cannot deflate shape {s:?}: need (b, c, 2, h, w)")));
    }
    Ok(())
}

/// `(2b, c, h, w)` to `(b, c, 2, h, w)`: batch `2i` is frame 0 of item `i`,
/// batch `2i + 1` its frame 1.
pub fn inflate(t: &Tensor) -> Result<Tensor, AdapterError> {
    let s = t.shape().to_vec();
    check_inflatable(&s)?;
    Ok(t.clone().reshape(&[s[0] / 2, 2, s[1], s[2], s[3]])?.permute(&[0, 2, 1, 3, 4])?)
}

pub fn deflate(t: &Tensor) -> Result<Tensor, AdapterError> {
    let s = t.shape().to_vec();
    check_deflatable(&s)?;
    Ok(t.permute(&[0, 2, 1, 3, 4])?.reshape(&[s[0] * 2, s[1], s[3], s[4]])?)
}

pub fn inflate_var(g: &mut Graph, v: Var) -> Result<Var, AdapterError> {
    let s = g.shape(v).to_vec();
    check_inflatable(&s)?;
    let r = g.reshape(v, &[s[0] / 2, 2, s[1], s[2], s[3]])?;
    Ok(g.permute(r, &[0, 2, 1, 3, 4])?)
}

pub fn deflate_var(g: &mut Graph, v: Var) -> Result<Var, AdapterError> {
    let s = g.shape(v).to_vec();
    check_deflatable(&s)?;
    let p = g.permute(v, &[0, 2, 1, 3, 4])?;
    Ok(g.reshape(p, &[s[0] * 2, s[1], s[3], s[4]])?)
}
