//! Finite-difference check of the denoising loss.

use super::model::{AdapterConfig, AdapterModel, DenoiseBatch, ALIGN_PREFIX, ATTN_PREFIX, BACKBONE_PREFIX, LORA_PREFIX};
use super::AdapterError;
use crate::nn::{grad_check_params, GradCheckReport, NnError, Tensor};
use crate::rng::substream;

/// Two-frame loss gradient w.r.t. every LoRA, alignment and attention
/// tensor on a `latent x latent` input. Zero-initialized tensors are
/// jittered first so no gradient is trivially zero; `per_tensor` limits the
/// number of perturbed elements per tensor.
const JITTER_BACKBONE: f64 = 0.1;

pub fn loss_grad_check(
    config: AdapterConfig,
    latent: usize,
    seed: u64,
    h: f64,
    tol: f64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport, AdapterError> {
    let mut model = AdapterModel::new(config)?;
    let mut rng = substream(seed, "grad-check");
    // the backbone is mostly initialized already; a light jitter only
    // wakes its zero-initialized branches
    for (p, scale) in [(BACKBONE_PREFIX, JITTER_BACKBONE), (LORA_PREFIX, 1.0), (ALIGN_PREFIX, 1.0), (ATTN_PREFIX, 1.0)] {
        model.store.jitter_prefix(p, scale, &mut rng);
    }
    model.set_trainable(&[LORA_PREFIX, ALIGN_PREFIX, ATTN_PREFIX]);
    let c = model.latent_channels();
    let steps = model.config.schedule.steps;
    let t = (seed as usize * 7919 + 123) % steps;
    let batch = DenoiseBatch {
        zt: Tensor::randn(&[2, c, latent, latent], &mut rng),
        cond: Tensor::randn(&[2, c + 1, latent, latent], &mut rng),
        timesteps: vec![t, t],
        prompts: model.frame_prompts(&["a red circle".to_string()]),
        gates: model.frame_gates(1),
    };
    let eps = Tensor::randn(batch.zt.shape(), &mut rng);
    let ids = model.store.trainable();
    let mut store = model.store.clone();
    Ok(grad_check_params(
        &mut store,
        &ids,
        |g, s| {
            model.loss_with(s, g, &batch, &eps, true).map_err(|e| match e {
                AdapterError::Nn(n) => n,
                other => NnError::Shape(other.to_string()),
            })
        },
        h,
        tol,
        per_tensor,
        &mut substream(seed, "grad-check-pick"),
    )?)
}
