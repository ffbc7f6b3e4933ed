//! Latent encoding of RGBA images, inpainting conditions and training batches.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::model::DenoiseBatch;
use super::prompt::{alpha_prompt, embed_prompt, PROMPT_DIM};
use super::schedule::{add_noise, DiffusionSchedule};
use super::{AdapterError, LatentCodec};
use crate::edge::BinaryMask;
use crate::nn::Tensor;
use crate::rgba::{rgb_pad, PaddingStrategy, RgbaImage};
use crate::rng::{uniform, StreamRng};

/// Codec values in `[0, 1]` to the model's `[-1, 1]` range.
pub fn to_model_space(t: Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

pub fn from_model_space(v: f64) -> f64 {
    ((v + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Both frame latents of one image, in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub rgb: Tensor,
    pub alpha: Tensor,
    pub prompt: String,
}

impl EncodedImage {
    pub fn new(img: &RgbaImage, prompt: &str, codec: LatentCodec, padding: &PaddingStrategy) -> Result<Self, AdapterError> {
        let padded = rgb_pad(img, padding)?;
        Ok(Self {
            rgb: to_model_space(codec.encode_rgb(&padded)?),
            alpha: to_model_space(codec.encode_alpha(img)?),
            prompt: prompt.to_string(),
        })
    }

    pub fn frame(&self, alpha: bool) -> &Tensor {
        if alpha {
            &self.alpha
        } else {
            &self.rgb
        }
    }

    /// `(h, w)` of the latent.
    pub fn latent_dims(&self) -> (usize, usize) {
        (self.rgb.shape()[1], self.rgb.shape()[2])
    }
}

/// A latent pixel is masked when any pixel of its patch is.
pub fn latent_mask(mask: &BinaryMask, patch: usize) -> Vec<f64> {
    let (lw, lh) = (mask.width() / patch, mask.height() / patch);
    let mut out = vec![0.0; lw * lh];
    for y in 0..lh * patch {
        for x in 0..lw * patch {
            if mask.get(x, y) {
                out[(y / patch) * lw + x / patch] = 1.0;
            }
        }
    }
    out
}

/// `(1 + c, h, w)`: the mask, then the latent with masked sites set to 0.
pub fn condition(latent: &Tensor, lmask: &[f64]) -> Result<Tensor, AdapterError> {
    let s = latent.shape();
    let hw = s[1] * s[2];
    if lmask.len() != hw {
        return Err(AdapterError::Condition(format!("mask of {} sites for latent {s:?}", lmask.len())));
    }
    let mut out = Vec::with_capacity((s[0] + 1) * hw);
    out.extend_from_slice(lmask);
    for ch in latent.data().chunks(hw) {
        out.extend(ch.iter().zip(lmask).map(|(v, m)| if *m > 0.0 { 0.0 } else { *v }));
    }
    Ok(Tensor::new(&[s[0] + 1, s[1], s[2]], out)?)
}

/// Union of one to three random rectangles and ellipses. Always has at
/// least one masked and one unmasked pixel when `w * h >= 2`.
pub fn random_mask(w: usize, h: usize, rng: &mut StreamRng) -> BinaryMask {
    let mut m = BinaryMask::new(w, h);
    for _ in 0..rng.random_range(1..=3) {
        let (cx, cy) = (uniform(rng, 0.2, 0.8) * w as f64, uniform(rng, 0.2, 0.8) * h as f64);
        let (rx, ry) = (uniform(rng, 0.1, 0.35) * w as f64, uniform(rng, 0.1, 0.35) * h as f64);
        let ellipse = rng.random::<bool>();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let inside = if ellipse { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    m.set(x, y, true);
                }
            }
        }
    }
    if m.none() {
        m.set(w / 2, h / 2, true);
    }
    if m.count() == m.len() {
        m.set(0, 0, false);
    }
    m
}

pub(crate) fn stack(items: &[Tensor]) -> Result<Tensor, AdapterError> {
    let first = items.first().ok_or_else(|| AdapterError::Config("empty batch".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let data: Vec<f64> = items.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::new(&shape, data)?)
}

/// Which frames single-frame batches draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMix {
    Rgb,
    Alpha,
    /// Each item is the RGB or the alpha frame with equal probability.
    Mixed,
}

/// Batch of independent single-frame items. Alpha-frame items use the
/// prefixed prompt and an active LoRA gate. Returns the batch and its noise.
pub fn single_frame_batch(
    corpus: &[EncodedImage],
    n: usize,
    mix: FrameMix,
    schedule: &DiffusionSchedule,
    offset_noise: f64,
    rng: &mut StreamRng,
) -> Result<(DenoiseBatch, Tensor), AdapterError> {
    if corpus.is_empty() {
        return Err(AdapterError::EmptyCorpus);
    }
    let mut latents = Vec::with_capacity(n);
    let mut conds = Vec::with_capacity(n);
    let mut prompts = Vec::with_capacity(n);
    let mut gates = Vec::with_capacity(n);
    for _ in 0..n {
        let item = corpus.choose(rng).expect("non-empty");
        let alpha = match mix {
            FrameMix::Rgb => false,
            FrameMix::Alpha => true,
            FrameMix::Mixed => rng.random::<bool>(),
        };
        let (lh, lw) = item.latent_dims();
        let lmask: Vec<f64> = random_mask(lw, lh, rng).data().iter().map(|&b| b as u8 as f64).collect();
        let z0 = item.frame(alpha);
        conds.push(condition(z0, &lmask)?);
        latents.push(z0.clone());
        let text = if alpha { alpha_prompt(&item.prompt) } else { item.prompt.clone() };
        prompts.push(embed_prompt(&text, PROMPT_DIM));
        gates.push(if alpha { 1.0 } else { 0.0 });
    }
    let timesteps: Vec<usize> = (0..n).map(|_| rng.random_range(0..schedule.steps)).collect();
    let z0 = stack(&latents)?;
    let (zt, eps) = add_noise(&z0, &timesteps, schedule, offset_noise, rng)?;
    Ok((DenoiseBatch { zt, cond: stack(&conds)?, timesteps, prompts, gates }, eps))
}

/// Batch of `b` two-frame items, deflated to `2b` rows. Both frames share a
/// mask and a timestep; the noise is drawn independently per frame.
pub fn two_frame_batch(
    corpus: &[EncodedImage],
    b: usize,
    shared_lora: bool,
    schedule: &DiffusionSchedule,
    offset_noise: f64,
    rng: &mut StreamRng,
) -> Result<(DenoiseBatch, Tensor), AdapterError> {
    if corpus.is_empty() {
        return Err(AdapterError::EmptyCorpus);
    }
    let mut latents = Vec::with_capacity(2 * b);
    let mut conds = Vec::with_capacity(2 * b);
    let mut prompts = Vec::with_capacity(2 * b);
    let mut gates = Vec::with_capacity(2 * b);
    let mut timesteps = Vec::with_capacity(2 * b);
    for _ in 0..b {
        let item = corpus.choose(rng).expect("non-empty");
        let (lh, lw) = item.latent_dims();
        let lmask: Vec<f64> = random_mask(lw, lh, rng).data().iter().map(|&v| v as u8 as f64).collect();
        let t = rng.random_range(0..schedule.steps);
        for alpha in [false, true] {
            let z0 = item.frame(alpha);
            conds.push(condition(z0, &lmask)?);
            latents.push(z0.clone());
            let text = if alpha { alpha_prompt(&item.prompt) } else { item.prompt.clone() };
            prompts.push(embed_prompt(&text, PROMPT_DIM));
            gates.push(if alpha || shared_lora { 1.0 } else { 0.0 });
            timesteps.push(t);
        }
    }
    let z0 = stack(&latents)?;
    let (zt, eps) = add_noise(&z0, &timesteps, schedule, offset_noise, rng)?;
    Ok((DenoiseBatch { zt, cond: stack(&conds)?, timesteps, prompts, gates }, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rgba::PaddingVariant;
    use crate::rng::substream;
    use crate::synth::synth_image;

    #[test]
    fn latent_mask_any_pooling() {
        let mut m = BinaryMask::new(8, 8);
        m.set(5, 2, true);
        assert_eq!(latent_mask(&m, 4), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn condition_zeroes_masked_sites() {
        let lat = Tensor::new(&[2, 1, 2], vec![0.5, -0.5, 0.25, 0.75]).unwrap();
        let c = condition(&lat, &[1.0, 0.0]).unwrap();
        assert_eq!(c.data(), &[1.0, 0.0, 0.0, -0.5, 0.0, 0.75]);
    }

    #[test]
    fn random_masks_are_non_degenerate() {
        let mut rng = substream(0, "t");
        for _ in 0..200 {
            let m = random_mask(8, 8, &mut rng);
            assert!(m.count() > 0 && m.count() < 64);
        }
    }

    #[test]
    fn two_frame_batch_interleaves_frames() {
        let img = synth_image(32, 32, 0, 0);
        let enc = EncodedImage::new(&img, "a shape", LatentCodec::default(), &PaddingStrategy::new(PaddingVariant::GreyBackground)).unwrap();
        let mut rng = substream(1, "t");
        let (batch, eps) = two_frame_batch(std::slice::from_ref(&enc), 2, false, &DiffusionSchedule::default(), 0.0, &mut rng).unwrap();
        assert_eq!(batch.zt.shape(), &[4, 48, 8, 8]);
        assert_eq!(eps.shape(), batch.zt.shape());
        assert_eq!(batch.gates, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(batch.timesteps[0], batch.timesteps[1]);
        let n = 49 * 64;
        // frame 1 conditioning carries the alpha latent where unmasked
        let mask = &batch.cond.data()[n..n + 64];
        let a0 = &batch.cond.data()[n + 64..n + 128];
        for i in 0..64 {
            assert_eq!(a0[i], if mask[i] > 0.0 { 0.0 } else { enc.alpha.data()[i] });
        }
    }
}
