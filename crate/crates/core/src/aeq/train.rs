//! Classifier training on clean images degraded on the fly.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::input::{build_input, AeqInput, AEQ_INPUT_CHANNELS};
use super::{degrade, AeqClassifier, AeqConfig, AeqError, DegradationSpec, DegradeMode};
use crate::edge::{BinaryMask, NoiseSpec};
use crate::nn::{apply_buffer_updates, grad_check_params, Adam, GradCheckReport, Graph, NnError, Tensor, Var};
use crate::rgba::RgbaImage;
use crate::rng::{indexed_substream, substream, uniform, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Square training resolutions; one is drawn per batch.
    pub resolutions: Vec<usize>,
    /// Cross-entropy weights of the high- and low-quality classes.
    pub class_weights: [f64; 2],
    /// Per-pixel loss multiplier is `1 + edge_weight * M_e`.
    pub edge_weight: f64,
    /// Probability that a sample is left undegraded.
    pub clean_fraction: f64,
    pub seed: u64,
    pub classifier: AeqConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 4,
            lr: 1e-4,
            resolutions: vec![128],
            class_weights: [1.0, 10.0],
            edge_weight: 4.0,
            clean_fraction: 0.25,
            seed: 0,
            classifier: AeqConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AeqError> {
        if self.batch_size == 0 {
            return Err(AeqError::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(AeqError::Config("learning rate must be positive".into()));
        }
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&r| r == 0 || r % super::AEQ_STRIDE != 0) {
            return Err(AeqError::Config(format!(
                "resolutions must be non-empty multiples of {}",
                super::AEQ_STRIDE
            )));
        }
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return Err(AeqError::Config("clean fraction must be in [0, 1]".into()));
        }
        self.classifier.validate()
    }
}

/// One training example: classifier input and per-pixel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AeqSample {
    pub input: AeqInput,
    /// `true` marks low-quality pixels.
    pub label: BinaryMask,
}

impl AeqSample {
    /// Degrades `clean` with `spec` (or keeps it when `None`) and builds the
    /// classifier input from the result.
    pub fn new(clean: &RgbaImage, spec: Option<&DegradationSpec>, seed: u64) -> Result<Self, AeqError> {
        let (image, label) = match spec {
            Some(s) => {
                let d = degrade(clean, s, seed)?;
                (d.image, d.label)
            }
            None => (clean.clone(), BinaryMask::new(clean.width(), clean.height())),
        };
        Ok(Self { input: build_input(&image), label })
    }
}

/// Random degradation for training; `None` means keep the sample clean.
pub fn sample_degradation(rng: &mut StreamRng, resolution: usize, clean_fraction: f64) -> Option<DegradationSpec> {
    if rng.random::<f64>() < clean_fraction {
        return None;
    }
    let noise = NoiseSpec { seed: rng.random(), base_scale: (resolution as f64 / 4.0).max(4.0), ..NoiseSpec::default() };
    let base = DegradationSpec { noise, ..DegradationSpec::default() };
    let pick: f64 = rng.random();
    Some(if pick < 0.5 {
        let dilation = *[0usize, 3, 5, 7, 9].choose(rng).expect("non-empty");
        let mut blur_sigma = uniform(rng, 0.0, 3.0);
        if dilation == 0 && blur_sigma < 1.0 {
            blur_sigma = uniform(rng, 1.0, 3.0);
        }
        DegradationSpec { mode: DegradeMode::DilateBlur, dilation, blur_sigma, ..base }
    } else if pick < 0.75 {
        DegradationSpec {
            mode: DegradeMode::SolidFillDilate,
            dilation: *[3usize, 5, 7, 9].choose(rng).expect("non-empty"),
            fill_color: [rng.random(), rng.random(), rng.random()],
            ..base
        }
    } else {
        DegradationSpec { mode: DegradeMode::SegmentationProxy, matte_threshold: uniform(rng, 0.05, 0.3), ..base }
    })
}

/// Random `res x res` window of `img`, padding with transparency first when
/// the image is smaller.
pub fn fit_to(img: &RgbaImage, res: usize, rng: &mut StreamRng) -> Result<RgbaImage, AeqError> {
    let (w, h) = img.dims();
    let (pw, ph) = (w.max(res), h.max(res));
    let padded = if (pw, ph) == (w, h) {
        img.clone()
    } else {
        img.pad_to(pw, ph, rng.random_range(0..=pw - w), rng.random_range(0..=ph - h))?
    };
    if (pw, ph) == (res, res) {
        return Ok(padded);
    }
    Ok(padded.crop(rng.random_range(0..=pw - res), rng.random_range(0..=ph - res), res, res)?)
}

/// Draws a batch at one resolution from `corpus`.
pub fn draw_batch(corpus: &[RgbaImage], cfg: &TrainConfig, rng: &mut StreamRng) -> Result<Vec<AeqSample>, AeqError> {
    if corpus.is_empty() {
        return Err(AeqError::EmptyCorpus);
    }
    let res = *cfg.resolutions.choose(rng).expect("validated non-empty");
    (0..cfg.batch_size)
        .map(|_| {
            let img = fit_to(corpus.choose(rng).expect("non-empty"), res, rng)?;
            let spec = sample_degradation(rng, res, cfg.clean_fraction);
            AeqSample::new(&img, spec.as_ref(), rng.random())
        })
        .collect()
}

/// Weighted cross-entropy of a batch: class weights per target, times
/// `1 + edge_weight * M_e` per pixel, averaged over all pixels.
pub fn batch_loss(
    clf: &AeqClassifier,
    g: &mut Graph,
    batch: &[AeqSample],
    class_weights: [f64; 2],
    edge_weight: f64,
    training: bool,
) -> Result<Var, AeqError> {
    let first = batch.first().ok_or(AeqError::EmptyCorpus)?;
    let (w, h) = (first.input.width(), first.input.height());
    let mut data = Vec::with_capacity(batch.len() * AEQ_INPUT_CHANNELS * w * h);
    let mut target = Vec::with_capacity(batch.len() * w * h);
    let mut pixel_weights = Vec::with_capacity(batch.len() * w * h);
    for s in batch {
        if (s.input.width(), s.input.height()) != (w, h) {
            return Err(NnError::Shape("batch samples differ in size".into()).into());
        }
        data.extend_from_slice(s.input.tensor.data());
        target.extend(s.label.data().iter().map(|&l| l as usize));
        pixel_weights.extend(s.input.edge_mask.data().iter().map(|&e| if e { 1.0 + edge_weight } else { 1.0 }));
    }
    let x = g.constant(Tensor::new(&[batch.len(), AEQ_INPUT_CHANNELS, h, w], data)?)?;
    let logits = clf.forward(g, x, training)?;
    Ok(g.cross_entropy(logits, &target, &class_weights, Some(&pixel_weights))?)
}

/// One optimizer step; returns the batch loss before the update. Running
/// statistics are only updated when some parameter is trainable.
pub fn train_step(clf: &mut AeqClassifier, opt: &mut Adam, batch: &[AeqSample], cfg: &TrainConfig) -> Result<f64, AeqError> {
    let mut g = Graph::new();
    let loss = batch_loss(clf, &mut g, batch, cfg.class_weights, cfg.edge_weight, true)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    if clf.store.trainable().is_empty() {
        return Ok(value);
    }
    opt.step(&mut clf.store, &grads);
    apply_buffer_updates(&mut clf.store, &mut g)?;
    Ok(value)
}

/// Eval-mode loss of a batch.
pub fn eval_loss(clf: &AeqClassifier, batch: &[AeqSample], cfg: &TrainConfig) -> Result<f64, AeqError> {
    let mut g = Graph::no_grad();
    let loss = batch_loss(clf, &mut g, batch, cfg.class_weights, cfg.edge_weight, false)?;
    Ok(g.value(loss).item())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// Training loss of every step, measured before its update.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the first (or last) `k` recorded losses.
    pub fn head_mean(&self, k: usize) -> f64 {
        mean(&self.losses[..k.min(self.losses.len())])
    }

    pub fn tail_mean(&self, k: usize) -> f64 {
        mean(&self.losses[self.losses.len().saturating_sub(k)..])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains a fresh classifier. `on_step(iteration, loss)` is called after
/// every update.
pub fn train_classifier(
    corpus: &[RgbaImage],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(AeqClassifier, TrainReport), AeqError> {
    if corpus.is_empty() {
        return Err(AeqError::EmptyCorpus);
    }
    cfg.validate()?;
    let mut clf = AeqClassifier::new(AeqConfig { seed: cfg.seed, ..cfg.classifier.clone() })?;
    let mut opt = Adam::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rng = indexed_substream(cfg.seed, "aeq-batch", it as u64);
        let batch = draw_batch(corpus, cfg, &mut rng)?;
        let loss = train_step(&mut clf, &mut opt, &batch, cfg)?;
        losses.push(loss);
        on_step(it, loss);
    }
    Ok((clf, TrainReport { iterations: cfg.iterations, losses }))
}

/// Fixed evaluation batches drawn from their own stream.
pub fn heldout_batches(
    corpus: &[RgbaImage],
    cfg: &TrainConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<AeqSample>>, AeqError> {
    let mut rng = substream(seed, "aeq-heldout");
    (0..count).map(|_| draw_batch(corpus, cfg, &mut rng)).collect()
}

/// Finite-difference check of the weighted cross-entropy w.r.t. every
/// classifier parameter, on a two-sample batch (one clean, one degraded) of
/// synthetic `resolution x resolution` images. Parameters are jittered first
/// so the zero-initialized head does not hide the upstream gradients.
pub fn loss_grad_check(
    base_width: usize,
    resolution: usize,
    seed: u64,
    h: f64,
    tol: f64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport, AeqError> {
    let mut clf = AeqClassifier::new(AeqConfig::with_base_width(base_width, seed))?;
    let mut rng = substream(seed, "aeq-grad-check");
    clf.store.jitter_prefix("", 1.0, &mut rng);
    let clean = crate::synth::synth_image(resolution, resolution, seed, 0);
    let spec = DegradationSpec { dilation: 3, blur_sigma: 1.0, ..DegradationSpec::default() };
    let batch = [AeqSample::new(&clean, None, 0)?, AeqSample::new(&clean, Some(&spec), seed)?];
    let cfg = TrainConfig::default();
    let ids = clf.store.trainable();
    let mut store = clf.store.clone();
    Ok(grad_check_params(
        &mut store,
        &ids,
        |g, s| {
            let mut probe = clf.clone();
            probe.store = s.clone();
            batch_loss(&probe, g, &batch, cfg.class_weights, cfg.edge_weight, true).map_err(|e| match e {
                AeqError::Nn(n) => n,
                other => NnError::Shape(other.to_string()),
            })
        },
        h,
        tol,
        per_tensor,
        &mut substream(seed, "aeq-grad-check-pick"),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::Plane;

    fn shape_image(n: usize, seed: u64) -> RgbaImage {
        let mut rng = substream(seed, "test-shape");
        let (cx, cy, r) = (uniform(&mut rng, 5.0, 11.0), uniform(&mut rng, 5.0, 11.0), uniform(&mut rng, 3.0, 6.0));
        let alpha = Plane::from_fn(n, n, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            (r + 0.5 - d).clamp(0.0, 1.0)
        });
        let rgb: Vec<f64> = (0..3 * n * n).map(|i| ((i * 7 + seed as usize) % 11) as f64 / 10.0).collect();
        RgbaImage::new(n, n, rgb, alpha.into_vec()).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 3,
            batch_size: 2,
            resolutions: vec![16],
            classifier: AeqConfig::with_base_width(2, 0),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(train_classifier(&[], &small_cfg(), |_, _| {}), Err(AeqError::EmptyCorpus)));
    }

    #[test]
    fn first_loss_is_weighted_ln2() {
        let corpus: Vec<_> = (0..4).map(|s| shape_image(16, s)).collect();
        let cfg = TrainConfig { clean_fraction: 0.0, ..small_cfg() };
        let mut rng = substream(1, "t");
        let batch = draw_batch(&corpus, &cfg, &mut rng).unwrap();
        let clf = AeqClassifier::new(cfg.classifier.clone()).unwrap();
        // oracle: uniform logits make every pixel cost ln 2 times its weights
        let mut total = 0.0;
        let mut count = 0usize;
        for s in &batch {
            for (&l, &e) in s.label.data().iter().zip(s.input.edge_mask.data()) {
                let cw = if l { 10.0 } else { 1.0 };
                let pw = if e { 5.0 } else { 1.0 };
                total += cw * pw * std::f64::consts::LN_2;
                count += 1;
            }
        }
        let got = eval_loss(&clf, &batch, &cfg).unwrap();
        assert!((got - total / count as f64).abs() < 1e-12, "{got} vs {}", total / count as f64);
        assert!(batch.iter().any(|s| s.label.count() > 0));
    }

    #[test]
    fn frozen_classifier_is_unchanged_by_a_step() {
        let corpus = vec![shape_image(16, 3)];
        let cfg = small_cfg();
        let mut clf = AeqClassifier::new(cfg.classifier.clone()).unwrap();
        clf.store.freeze_all();
        let before = clf.store.records();
        let batch = draw_batch(&corpus, &cfg, &mut substream(0, "t")).unwrap();
        train_step(&mut clf, &mut Adam::new(cfg.lr), &batch, &cfg).unwrap();
        assert_eq!(clf.store.records(), before);
    }

    #[test]
    fn training_is_deterministic_and_moves_parameters() {
        let corpus: Vec<_> = (0..3).map(|s| shape_image(20, s)).collect();
        let cfg = small_cfg();
        let (a, ra) = train_classifier(&corpus, &cfg, |_, _| {}).unwrap();
        let (b, rb) = train_classifier(&corpus, &cfg, |_, _| {}).unwrap();
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(a.store.records(), b.store.records());
        let fresh = AeqClassifier::new(cfg.classifier.clone()).unwrap();
        assert_ne!(a.store.records(), fresh.store.records());
    }

    #[test]
    fn fit_to_pads_and_crops() {
        let mut rng = substream(0, "t");
        let small = shape_image(12, 1);
        assert_eq!(fit_to(&small, 16, &mut rng).unwrap().dims(), (16, 16));
        let big = shape_image(40, 1);
        assert_eq!(fit_to(&big, 16, &mut rng).unwrap().dims(), (16, 16));
    }

    #[test]
    fn rejects_bad_config() {
        let corpus = vec![shape_image(16, 0)];
        let cfg = TrainConfig { resolutions: vec![12], ..small_cfg() };
        assert!(train_classifier(&corpus, &cfg, |_, _| {}).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let r = loss_grad_check(4, 16, 3, 1e-5, 1e-4, Some(4)).unwrap();
        assert!(r.entries.iter().any(|e| e.name.starts_with("head")));
        assert!(r.passed, "{:?}", r.worst());
    }
}
