//! Two-frame inpainting with DDPM ancestral sampling.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::backbone::BACKBONE_STRIDE;
use super::data::{condition, from_model_space, latent_mask, stack, EncodedImage};
use super::model::{AdapterModel, DenoiseBatch, Stage};
use super::schedule::{noised, sample_noise};
use super::AdapterError;
use crate::nn::{Graph, Tensor};
use crate::rgba::{blend_with_original, InpaintMask, RgbaImage};
use crate::rng::substream;

/// Starting point of sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseStrategy {
    /// Start from pure noise at the last timestep.
    PureNoise,
    /// Start from the input latent noised to `round(strength * (T - 1))`.
    BlendedNoise(f64),
}

impl NoiseStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseStrategy::PureNoise => "pure-noise",
            NoiseStrategy::BlendedNoise(_) => "blended-noise",
        }
    }
}

impl FromStr for NoiseStrategy {
    type Err = AdapterError;

    /// `pure`, `pure-noise`, `blended`, `blended-noise` (strength 0.99) or
    /// `blended:<strength>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h.to_string(), Some(t.to_string())),
            None => (s.clone(), None),
        };
        match (head.as_str(), tail) {
            ("pure" | "pure-noise", None) => Ok(NoiseStrategy::PureNoise),
            ("blended" | "blended-noise", None) => Ok(NoiseStrategy::BlendedNoise(0.99)),
            ("blended" | "blended-noise", Some(t)) => {
                let v: f64 = t.parse().map_err(|_| AdapterError::Config(format!("bad strength {t:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(AdapterError::Config(format!("strength must be in [0, 1], got {v}")));
                }
                Ok(NoiseStrategy::BlendedNoise(v))
            }
            _ => Err(AdapterError::Config(format!("unknown noise strategy {s:?}"))),
        }
    }
}

/// Timesteps visited, from `start` down to 0, at most `steps` of them.
pub fn sampling_timesteps(start: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, start + 1);
    if steps == 1 {
        return vec![start];
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| (start as f64 * (1.0 - i as f64 / (steps - 1) as f64)).round() as usize)
        .collect();
    ts.dedup();
    ts
}

/// Inpaints the masked region of `img`. The image is padded with
/// transparent pixels to the model's stride and cropped back; unmasked
/// pixels are always restored from the input.
pub fn inpaint(
    model: &AdapterModel,
    img: &RgbaImage,
    mask: &InpaintMask,
    prompt: &str,
    strategy: NoiseStrategy,
    steps: usize,
    seed: u64,
) -> Result<RgbaImage, AdapterError> {
    if model.stage == Stage::Untrained {
        return Err(AdapterError::Untrained("inpainting needs a trained model"));
    }
    mask.check_dims(img.width(), img.height())?;
    let cfg = &model.config;
    let schedule = &cfg.schedule;
    let start = match strategy {
        NoiseStrategy::PureNoise => schedule.steps - 1,
        NoiseStrategy::BlendedNoise(s) => {
            // zero strength means no denoising at all: the input is the result
            if s == 0.0 {
                schedule.blended_start(s)?;
                return Ok(img.clone());
            }
            schedule.blended_start(s)?
        }
    };
    let codec = cfg.codec();
    let unit = codec.patch * BACKBONE_STRIDE;
    let (w, h) = img.dims();
    let (pw, ph) = (w.next_multiple_of(unit), h.next_multiple_of(unit));
    let padded = img.pad_to(pw, ph, 0, 0)?;
    let mut pmask = crate::edge::BinaryMask::new(pw, ph);
    for y in 0..h {
        for x in 0..w {
            pmask.set(x, y, mask.mask().get(x, y));
        }
    }
    let enc = EncodedImage::new(&padded, prompt, codec, &cfg.padding)?;
    let lmask = latent_mask(&pmask, codec.patch);
    let z0 = stack(&[enc.rgb.clone(), enc.alpha.clone()])?;
    let cond = stack(&[condition(&enc.rgb, &lmask)?, condition(&enc.alpha, &lmask)?])?;
    let prompts = model.frame_prompts(&[prompt.to_string()]);
    let gates = model.frame_gates(1);
    let mut rng = substream(seed, "inpaint");
    let alpha_bars = schedule.alpha_bars();
    let init_noise = sample_noise(z0.shape(), 0.0, &mut rng);
    let mut z = match strategy {
        NoiseStrategy::PureNoise => init_noise,
        NoiseStrategy::BlendedNoise(_) => noised(&z0, &init_noise, &[start, start], schedule),
    };
    let ts = sampling_timesteps(start, steps);
    for (i, &t) in ts.iter().enumerate() {
        let batch = DenoiseBatch {
            zt: z.clone(),
            cond: cond.clone(),
            timesteps: vec![t, t],
            prompts: prompts.clone(),
            gates: gates.clone(),
        };
        let mut g = Graph::no_grad();
        let pred = model.forward(&mut g, &batch, true)?;
        let eps = g.value(pred);
        let ab = alpha_bars[t];
        let x0: Vec<f64> = z
            .data()
            .iter()
            .zip(eps.data())
            .map(|(zv, e)| ((zv - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-1.0, 1.0))
            .collect();
        let Some(&t_prev) = ts.get(i + 1) else {
            z = Tensor::new(z.shape(), x0)?;
            break;
        };
        let ab_prev = alpha_bars[t_prev];
        let beta = 1.0 - ab / ab_prev;
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        let noise = sample_noise(z.shape(), 0.0, &mut rng);
        let next: Vec<f64> = z
            .data()
            .iter()
            .zip(&x0)
            .zip(noise.data())
            .map(|((zv, x), n)| c0 * x + ct * zv + sigma * n)
            .collect();
        z = Tensor::new(z.shape(), next)?;
    }
    let n = z.len() / 2;
    let lat_shape = &z.shape()[1..];
    let (rgb, _) = codec.decode(&Tensor::new(lat_shape, z.data()[..n].to_vec())?)?;
    let (alpha3, _) = codec.decode(&Tensor::new(lat_shape, z.data()[n..].to_vec())?)?;
    let np = pw * ph;
    let rgb: Vec<f64> = rgb.into_iter().map(from_model_space).collect();
    let alpha: Vec<f64> = (0..np)
        .map(|i| from_model_space((alpha3[i] + alpha3[np + i] + alpha3[2 * np + i]) / 3.0))
        .collect();
    let result = RgbaImage::new(pw, ph, rgb, alpha)?.crop(0, 0, w, h)?;
    Ok(blend_with_original(&result, img, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_sequences() {
        assert_eq!(sampling_timesteps(999, 5), vec![999, 749, 500, 250, 0]);
        assert_eq!(sampling_timesteps(3, 10), vec![3, 2, 1, 0]);
        assert_eq!(sampling_timesteps(0, 10), vec![0]);
        assert_eq!(sampling_timesteps(10, 1), vec![10]);
    }

    #[test]
    fn parse_strategies() {
        assert_eq!("pure".parse::<NoiseStrategy>().unwrap(), NoiseStrategy::PureNoise);
        assert_eq!("blended".parse::<NoiseStrategy>().unwrap(), NoiseStrategy::BlendedNoise(0.99));
        assert_eq!("blended:0.5".parse::<NoiseStrategy>().unwrap(), NoiseStrategy::BlendedNoise(0.5));
        assert!("blended:2".parse::<NoiseStrategy>().is_err());
        assert!("ddim".parse::<NoiseStrategy>().is_err());
    }
}
