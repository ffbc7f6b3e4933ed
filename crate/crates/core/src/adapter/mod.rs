//! Two-frame RGBA inpainting adapter over a frozen toy denoiser.
//!
//! An RGBA image becomes two latent frames (padded RGB, replicated alpha).
//! Both frames run through the same frozen backbone as one deflated batch;
//! zero-initialized spatial alignment and cross-frame attention couple them
//! and a frame-gated LoRA specializes the backbone for alpha maps.

mod backbone;
mod check;
mod codec;
mod data;
mod lora;
mod model;
mod modules;
mod prompt;
mod sample;
mod schedule;
mod train;

pub use backbone::{Backbone, BackboneConfig, FrameHooks, BACKBONE_STRIDE};
pub use check::loss_grad_check;
pub use codec::{deflate, deflate_var, inflate, inflate_var, LatentCodec};
pub use data::{
    condition, from_model_space, latent_mask, random_mask, single_frame_batch, to_model_space, two_frame_batch,
    EncodedImage, FrameMix,
};
pub use lora::{Lora, LoraLinear};
pub use model::{
    AdapterConfig, AdapterModel, DenoiseBatch, ModelConfig, PretrainConfig, Stage, StageConfig, ALIGN_PREFIX,
    ATTN_PREFIX, BACKBONE_PREFIX, LORA_PREFIX,
};
pub use modules::{positional_embedding_2d, AdapterModules, CrossDomainAttention, SpatialAlign};
pub use prompt::{alpha_prompt, embed_prompt, prompt_pair, ALPHA_PREFIX, PROMPT_DIM};
pub use sample::{inpaint, sampling_timesteps, NoiseStrategy};
pub use schedule::{add_noise, noised, sample_noise, timestep_embedding, DiffusionSchedule};
pub use train::{
    alpha_validation_batches, encode_corpus, pretrain_backbone, train_stage1, train_stage2,
    two_frame_validation_batches, StageReport,
};

use thiserror::Error;

use crate::nn::NnError;
use crate::rgba::ImageError;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{0}")]
    Config(String),
    #[error("frame layout: {0}")]
    Frames(String),
    #[error("inconsistent conditioning: {0}")]
    Condition(String),
    #[error("timestep {t} out of range for {steps} steps")]
    Timestep { t: usize, steps: usize },
    #[error("untrained state: {0}")]
    Untrained(&'static str),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[cfg(test)]
mod tests;
