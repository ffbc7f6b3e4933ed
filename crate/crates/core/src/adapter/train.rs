//! Backbone pretraining and the two adapter training stages.

use serde::Serialize;

use super::data::{single_frame_batch, two_frame_batch, EncodedImage, FrameMix};
use super::model::{AdapterModel, DenoiseBatch, Stage, ALIGN_PREFIX, ATTN_PREFIX, BACKBONE_PREFIX, LORA_PREFIX};
use super::AdapterError;
use crate::nn::{Adam, Graph, Tensor};
use crate::rgba::RgbaImage;
use crate::rng::{indexed_substream, substream};

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub steps: usize,
    /// Training loss of each step, before its update.
    pub losses: Vec<f64>,
    /// `(step, validation loss)`, starting at step 0.
    pub validation: Vec<(usize, f64)>,
}

impl StageReport {
    pub fn initial_validation(&self) -> f64 {
        self.validation.first().map_or(f64::NAN, |v| v.1)
    }

    pub fn final_validation(&self) -> f64 {
        self.validation.last().map_or(f64::NAN, |v| v.1)
    }

    /// `1 - final / initial`.
    pub fn relative_improvement(&self) -> f64 {
        1.0 - self.final_validation() / self.initial_validation()
    }
}

/// Encodes `(image, prompt)` pairs with the configured codec and padding.
pub fn encode_corpus(model: &AdapterModel, items: &[(RgbaImage, String)]) -> Result<Vec<EncodedImage>, AdapterError> {
    let cfg = &model.config;
    items
        .iter()
        .map(|(img, prompt)| {
            if img.dims() != (cfg.image_size, cfg.image_size) {
                return Err(AdapterError::Config(format!(
                    "corpus image is {}x{}, expected {}x{}",
                    img.width(),
                    img.height(),
                    cfg.image_size,
                    cfg.image_size
                )));
            }
            EncodedImage::new(img, prompt, cfg.codec(), &cfg.padding)
        })
        .collect()
}

type Batch = (DenoiseBatch, Tensor);

fn mean_loss(model: &AdapterModel, batches: &[Batch], two_frame: bool) -> Result<f64, AdapterError> {
    let mut total = 0.0;
    for (b, eps) in batches {
        let mut g = Graph::no_grad();
        let l = model.loss(&mut g, b, eps, two_frame)?;
        total += g.value(l).item();
    }
    Ok(total / batches.len().max(1) as f64)
}

fn step(model: &mut AdapterModel, opt: &mut Adam, batch: &Batch, two_frame: bool) -> Result<f64, AdapterError> {
    let mut g = Graph::new();
    let l = model.loss(&mut g, &batch.0, &batch.1, two_frame)?;
    let value = g.value(l).item();
    let grads = g.backward(l)?;
    opt.step(&mut model.store, &grads);
    Ok(value)
}

/// Validation loss of the alpha frame (single-frame items, LoRA active).
pub fn alpha_validation_batches(model: &AdapterModel, val: &[EncodedImage]) -> Result<Vec<Batch>, AdapterError> {
    let cfg = &model.config;
    let mut rng = substream(cfg.seed, "stage1-validation");
    (0..cfg.validation_batches)
        .map(|_| single_frame_batch(val, cfg.stage1.batch_size, FrameMix::Alpha, &cfg.schedule, cfg.stage1.offset_noise, &mut rng))
        .collect()
}

pub fn two_frame_validation_batches(model: &AdapterModel, val: &[EncodedImage]) -> Result<Vec<Batch>, AdapterError> {
    let cfg = &model.config;
    let mut rng = substream(cfg.seed, "stage2-validation");
    (0..cfg.validation_batches)
        .map(|_| two_frame_batch(val, cfg.stage2.batch_size, cfg.model.shared_lora, &cfg.schedule, cfg.stage2.offset_noise, &mut rng))
        .collect()
}

/// Trains the backbone as a single-frame RGB inpainting denoiser until the
/// validation loss stops improving (or `max_steps`), then freezes every
/// parameter.
pub fn pretrain_backbone(
    model: &mut AdapterModel,
    train: &[EncodedImage],
    val: &[EncodedImage],
    mut on_step: impl FnMut(usize, f64),
) -> Result<StageReport, AdapterError> {
    if train.is_empty() || val.is_empty() {
        return Err(AdapterError::EmptyCorpus);
    }
    let cfg = model.config.clone();
    let p = &cfg.pretrain;
    let mut vrng = substream(cfg.seed, "pretrain-validation");
    let val_batches: Vec<Batch> = (0..cfg.validation_batches)
        .map(|_| single_frame_batch(val, p.batch_size, FrameMix::Rgb, &cfg.schedule, 0.0, &mut vrng))
        .collect::<Result<_, _>>()?;
    model.set_trainable(&[BACKBONE_PREFIX]);
    let mut opt = Adam::new(p.lr);
    let mut losses = Vec::new();
    let mut validation = vec![(0, mean_loss(model, &val_batches, false)?)];
    let mut best = validation[0].1;
    let mut stale = 0;
    for it in 0..p.max_steps {
        let mut rng = indexed_substream(cfg.seed, "pretrain-batch", it as u64);
        let batch = single_frame_batch(train, p.batch_size, FrameMix::Rgb, &cfg.schedule, 0.0, &mut rng)?;
        let l = step(model, &mut opt, &batch, false)?;
        losses.push(l);
        on_step(it, l);
        if (it + 1) % p.eval_every == 0 {
            let v = mean_loss(model, &val_batches, false)?;
            validation.push((it + 1, v));
            if v < best * (1.0 - p.min_delta) {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p.patience {
                    break;
                }
            }
        }
    }
    model.store.freeze_all();
    model.stage = Stage::Pretrained;
    Ok(StageReport { stage: Stage::Pretrained, steps: losses.len(), losses, validation })
}

fn eval_points(steps: usize, batches: usize) -> usize {
    if batches == 0 {
        0
    } else {
        (steps / 10).max(1)
    }
}

/// Stage 1: only LoRA is trained, on a mix of RGB-frame and alpha-frame
/// items with offset noise.
pub fn train_stage1(
    model: &mut AdapterModel,
    train: &[EncodedImage],
    val: &[EncodedImage],
    mut on_step: impl FnMut(usize, f64),
) -> Result<StageReport, AdapterError> {
    if model.stage < Stage::Pretrained {
        return Err(AdapterError::Untrained("stage 1 needs a pretrained backbone"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(AdapterError::EmptyCorpus);
    }
    let cfg = model.config.clone();
    let s = &cfg.stage1;
    let val_batches = alpha_validation_batches(model, val)?;
    model.set_trainable(&[LORA_PREFIX]);
    let mut opt = Adam::adamw(s.lr, s.weight_decay);
    let every = eval_points(s.steps, val_batches.len());
    let mut losses = Vec::with_capacity(s.steps);
    let mut validation = vec![(0, mean_loss(model, &val_batches, false)?)];
    for it in 0..s.steps {
        let mut rng = indexed_substream(cfg.seed, "stage1-batch", it as u64);
        let batch = single_frame_batch(train, s.batch_size, FrameMix::Mixed, &cfg.schedule, s.offset_noise, &mut rng)?;
        let l = step(model, &mut opt, &batch, false)?;
        losses.push(l);
        on_step(it, l);
        if (it + 1) % every == 0 || it + 1 == s.steps {
            validation.push((it + 1, mean_loss(model, &val_batches, false)?));
        }
    }
    model.store.freeze_all();
    model.stage = Stage::Stage1;
    Ok(StageReport { stage: Stage::Stage1, steps: s.steps, losses, validation })
}

/// Stage 2: LoRA, spatial alignment and cross-domain attention are trained
/// jointly on two-frame items.
pub fn train_stage2(
    model: &mut AdapterModel,
    train: &[EncodedImage],
    val: &[EncodedImage],
    mut on_step: impl FnMut(usize, f64),
) -> Result<StageReport, AdapterError> {
    if model.stage < Stage::Stage1 {
        return Err(AdapterError::Untrained("stage 2 needs a stage-1 LoRA"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(AdapterError::EmptyCorpus);
    }
    let cfg = model.config.clone();
    let s = &cfg.stage2;
    let val_batches = two_frame_validation_batches(model, val)?;
    model.set_trainable(&[LORA_PREFIX, ALIGN_PREFIX, ATTN_PREFIX]);
    let mut opt = Adam::adamw(s.lr, s.weight_decay);
    let every = eval_points(s.steps, val_batches.len());
    let mut losses = Vec::with_capacity(s.steps);
    let mut validation = vec![(0, mean_loss(model, &val_batches, true)?)];
    for it in 0..s.steps {
        let mut rng = indexed_substream(cfg.seed, "stage2-batch", it as u64);
        let batch = two_frame_batch(train, s.batch_size, cfg.model.shared_lora, &cfg.schedule, s.offset_noise, &mut rng)?;
        let l = step(model, &mut opt, &batch, true)?;
        losses.push(l);
        on_step(it, l);
        if (it + 1) % every == 0 || it + 1 == s.steps {
            validation.push((it + 1, mean_loss(model, &val_batches, true)?));
        }
    }
    model.store.freeze_all();
    model.stage = Stage::Stage2;
    Ok(StageReport { stage: Stage::Stage2, steps: s.steps, losses, validation })
}
