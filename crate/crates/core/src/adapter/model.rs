use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig, FrameHooks};
use super::modules::{AdapterModules, CrossDomainAttention, SpatialAlign};
use super::prompt::{prompt_pair, PROMPT_DIM};
use super::schedule::{timestep_embedding, DiffusionSchedule};
use super::{AdapterError, LatentCodec};
use crate::nn::{
    checkpoint_hash, load_checkpoint, record_text, save_checkpoint, text_record, Graph, NnError, ParamId, ParamStore,
    Tensor, Var,
};
use crate::rgba::{PaddingStrategy, PaddingVariant};
use crate::rng::substream;

pub const BACKBONE_PREFIX: &str = "backbone/";
pub const LORA_PREFIX: &str = "lora/";
pub const ALIGN_PREFIX: &str = "align/";
pub const ATTN_PREFIX: &str = "attn/";
const CONFIG_RECORD: &str = "meta/config";
const STAGE_RECORD: &str = "meta/stage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch: usize,
    pub widths: [usize; 2],
    pub time_dim: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Apply LoRA to both frames instead of the alpha frame only.
    pub shared_lora: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { patch: 4, widths: [32, 64], time_dim: 32, lora_rank: 16, lora_alpha: 32.0, shared_lora: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub max_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Validation is run every `eval_every` steps.
    pub eval_every: usize,
    /// Stop after this many evaluations without relative improvement
    /// above `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { max_steps: 3000, lr: 5e-4, batch_size: 4, eval_every: 100, patience: 3, min_delta: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub offset_noise: f64,
}

impl StageConfig {
    pub fn stage1() -> Self {
        Self { steps: 1500, lr: 1e-4, weight_decay: 1e-2, batch_size: 4, offset_noise: 0.1 }
    }

    pub fn stage2() -> Self {
        Self { steps: 3000, lr: 5e-5, weight_decay: 1e-2, batch_size: 4, offset_noise: 0.0 }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub model: ModelConfig,
    pub schedule: DiffusionSchedule,
    /// Square training image size in pixels.
    pub image_size: usize,
    pub padding: PaddingStrategy,
    pub pretrain: PretrainConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Fixed batches used for validation losses.
    pub validation_batches: usize,
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: DiffusionSchedule::default(),
            image_size: 128,
            padding: PaddingStrategy::new(PaddingVariant::ContentExtension),
            pretrain: PretrainConfig::default(),
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            validation_batches: 4,
            seed: 0,
        }
    }
}

impl AdapterConfig {
    pub fn codec(&self) -> LatentCodec {
        LatentCodec { patch: self.model.patch }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        self.schedule.validate()?;
        self.padding.validate()?;
        let m = &self.model;
        if m.patch == 0 || m.widths.contains(&0) || m.time_dim < 2 || m.lora_rank == 0 {
            return Err(AdapterError::Config("model sizes must be positive".into()));
        }
        if !m.widths[1].is_multiple_of(4) {
            return Err(AdapterError::Config("bottleneck width must be a multiple of 4".into()));
        }
        let unit = m.patch * super::BACKBONE_STRIDE;
        if self.image_size == 0 || !self.image_size.is_multiple_of(unit) {
            return Err(AdapterError::Config(format!("image size must be a multiple of {unit}")));
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if s.batch_size == 0 || !s.lr.is_finite() || s.lr <= 0.0 {
                return Err(AdapterError::Config(format!("{name}: batch size and learning rate must be positive")));
            }
        }
        if self.pretrain.batch_size == 0 || !self.pretrain.lr.is_finite() || self.pretrain.lr <= 0.0 || self.pretrain.eval_every == 0 {
            return Err(AdapterError::Config("pretrain: batch size, lr and eval interval must be positive".into()));
        }
        Ok(())
    }
}

/// Training progress recorded with the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Untrained,
    Pretrained,
    Stage1,
    Stage2,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::Untrained => "untrained",
            Stage::Pretrained => "pretrained",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }

    fn parse(s: &str) -> Result<Self, AdapterError> {
        Ok(match s {
            "untrained" => Stage::Untrained,
            "pretrained" => Stage::Pretrained,
            "stage1" => Stage::Stage1,
            "stage2" => Stage::Stage2,
            _ => return Err(AdapterError::Config(format!("unknown stage {s:?}"))),
        })
    }
}

/// One denoiser call: rows of the leading axis are independent items.
#[derive(Debug, Clone)]
pub struct DenoiseBatch {
    /// `(n, c_lat, h, w)` noisy latents.
    pub zt: Tensor,
    /// `(n, 1 + c_lat, h, w)`: latent-resolution mask, masked latent.
    pub cond: Tensor,
    pub timesteps: Vec<usize>,
    /// `n` prompt embeddings.
    pub prompts: Vec<Vec<f64>>,
    /// LoRA gate per item.
    pub gates: Vec<f64>,
}

impl DenoiseBatch {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }
}

/// Frozen backbone plus LoRA, alignment and attention modules.
#[derive(Debug, Clone)]
pub struct AdapterModel {
    pub config: AdapterConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub modules: AdapterModules,
    pub stage: Stage,
}

impl AdapterModel {
    pub fn new(config: AdapterConfig) -> Result<Self, AdapterError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let m = &config.model;
        let latent_channels = config.codec().latent_channels(3);
        let bcfg = BackboneConfig { latent_channels, widths: m.widths, time_dim: m.time_dim, prompt_dim: PROMPT_DIM };
        let mut backbone = Backbone::new(&mut store, BACKBONE_PREFIX, bcfg, &mut substream(config.seed, "backbone-init"));
        backbone.attach_lora(&mut store, BACKBONE_PREFIX, LORA_PREFIX, m.lora_rank, m.lora_alpha, &mut substream(config.seed, "lora-init"));
        let mut rng = substream(config.seed, "adapter-init");
        let [w0, w1, wb] = backbone.hook_widths();
        let modules = AdapterModules {
            align: [
                SpatialAlign::new(&mut store, &format!("{ALIGN_PREFIX}level0"), w0, &mut rng),
                SpatialAlign::new(&mut store, &format!("{ALIGN_PREFIX}level1"), w1, &mut rng),
            ],
            attn: CrossDomainAttention::new(&mut store, &format!("{ATTN_PREFIX}bottleneck"), wb, &mut rng),
        };
        Ok(Self { config, store, backbone, modules, stage: Stage::Untrained })
    }

    pub fn latent_channels(&self) -> usize {
        self.backbone.config.latent_channels
    }

    pub fn lora_params(&self) -> Vec<ParamId> {
        self.backbone.lora_params()
    }

    pub fn adapter_params(&self) -> Vec<ParamId> {
        self.modules.params()
    }

    /// Largest absolute entry of any dense LoRA delta.
    pub fn lora_delta_max(&self) -> f64 {
        self.backbone.loras().iter().flat_map(|l| l.delta(&self.store)).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Freezes everything, then unfreezes the given prefixes.
    pub fn set_trainable(&mut self, prefixes: &[&str]) {
        self.store.freeze_all();
        for p in prefixes {
            self.store.set_frozen_prefix(p, false);
        }
    }

    /// SHA-256 of the backbone tensors.
    pub fn backbone_hash(&self) -> String {
        checkpoint_hash(&self.store.records_with_prefix(BACKBONE_PREFIX))
    }

    /// LoRA gates for an interleaved two-frame batch of `b` items.
    pub fn frame_gates(&self, b: usize) -> Vec<f64> {
        let alpha_only = !self.config.model.shared_lora;
        (0..2 * b).map(|i| if alpha_only && i % 2 == 0 { 0.0 } else { 1.0 }).collect()
    }

    /// Prompt embeddings for an interleaved two-frame batch.
    pub fn frame_prompts(&self, prompts: &[String]) -> Vec<Vec<f64>> {
        prompts.iter().flat_map(|p| prompt_pair(p, PROMPT_DIM)).collect()
    }

    /// Noise prediction `(n, c_lat, h, w)`. With `two_frame`, the batch is
    /// deflated (frame 0 and 1 of item `i` at rows `2i`, `2i + 1`) and the
    /// adapter modules are interleaved; otherwise items are independent.
    pub fn forward(&self, g: &mut Graph, batch: &DenoiseBatch, two_frame: bool) -> Result<Var, AdapterError> {
        self.forward_with(&self.store, g, batch, two_frame)
    }

    /// [`Self::forward`] with parameter values taken from `store`, which must
    /// hold the same tensors as `self.store`.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        batch: &DenoiseBatch,
        two_frame: bool,
    ) -> Result<Var, AdapterError> {
        let n = batch.len();
        let c = self.latent_channels();
        let zs = batch.zt.shape();
        if zs.len() != 4 || zs[0] != n || zs[1] != c {
            return Err(NnError::Shape(format!("noisy latent {zs:?} for {n} items of {c} channels")).into());
        }
        let cs = batch.cond.shape();
        if cs != [n, c + 1, zs[2], zs[3]] {
            return Err(AdapterError::Condition(format!("conditioning {cs:?} does not match latent {zs:?}")));
        }
        if batch.prompts.len() != n || batch.gates.len() != n {
            return Err(AdapterError::Condition(format!("{n} items need {n} prompts and gates")));
        }
        if two_frame && !n.is_multiple_of(2) {
            return Err(AdapterError::Frames(format!("two-frame batch of {n} rows")));
        }
        let tdim = self.config.model.time_dim;
        for &t in &batch.timesteps {
            self.config.schedule.check_t(t)?;
        }
        let temb: Vec<f64> = batch.timesteps.iter().flat_map(|&t| timestep_embedding(t, tdim)).collect();
        let prompts: Vec<f64> = batch.prompts.iter().flatten().copied().collect();
        let zt = g.constant(batch.zt.clone())?;
        let cond = g.constant(batch.cond.clone())?;
        let x = g.concat(&[zt, cond], 1)?;
        let temb = g.constant(Tensor::new(&[n, tdim], temb)?)?;
        let prompt = g.constant(Tensor::new(&[n, PROMPT_DIM], prompts)?)?;
        let hooks: Option<&dyn FrameHooks> = if two_frame { Some(&self.modules) } else { None };
        Ok(self.backbone.forward(g, store, x, temb, prompt, &batch.gates, hooks)?)
    }

    /// Mean squared error between predicted and true noise.
    pub fn loss(&self, g: &mut Graph, batch: &DenoiseBatch, eps: &Tensor, two_frame: bool) -> Result<Var, AdapterError> {
        self.loss_with(&self.store, g, batch, eps, two_frame)
    }

    pub fn loss_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        batch: &DenoiseBatch,
        eps: &Tensor,
        two_frame: bool,
    ) -> Result<Var, AdapterError> {
        let pred = self.forward_with(store, g, batch, two_frame)?;
        let target = g.constant(eps.clone())?;
        Ok(g.mse_loss(pred, target)?)
    }

    pub fn records(&self) -> Result<Vec<(String, Tensor)>, AdapterError> {
        let mut recs = self.store.records();
        let json = serde_json::to_string(&self.config).map_err(|e| AdapterError::Config(e.to_string()))?;
        recs.push(text_record(CONFIG_RECORD, &json));
        recs.push(text_record(STAGE_RECORD, self.stage.as_str()));
        Ok(recs)
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self, AdapterError> {
        let text = |name: &str| -> Result<String, AdapterError> {
            let (_, t) = records
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| AdapterError::Config(format!("checkpoint has no {name} record")))?;
            Ok(record_text(t)?)
        };
        let config: AdapterConfig =
            serde_json::from_str(&text(CONFIG_RECORD)?).map_err(|e| AdapterError::Config(e.to_string()))?;
        let mut model = Self::new(config)?;
        let loaded = model.store.load_from(records)?;
        if loaded != model.store.len() {
            return Err(AdapterError::Config(format!("checkpoint holds {loaded} of {} tensors", model.store.len())));
        }
        model.stage = Stage::parse(&text(STAGE_RECORD)?)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AdapterError> {
        Ok(save_checkpoint(path, &self.records()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdapterError> {
        Self::from_records(&load_checkpoint(path)?)
    }
}
