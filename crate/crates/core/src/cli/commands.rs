use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{resolve, Flags};
use super::{version_json, CliError, Common};
use crate::adapter::{
    self, encode_corpus, pretrain_backbone, train_stage1, train_stage2, AdapterConfig, AdapterModel, NoiseStrategy,
    StageConfig, StageReport,
};
use crate::aeq::{self, compute_aeq, train_classifier, AeqClassifier, DegradationSpec, DegradeMode, TrainConfig};
use crate::bench::{
    generate_mask, load_manifest, run_suite, write_report, AdapterInpainter, ExternalMetric, GreyFill, Identity, InpaintModel,
    ManifestEntry, MaskKind, MaskSpec, PromptKind, SuiteConfig,
};
use crate::nn::GradCheckReport;
use crate::rgba::{
    composite_over, load_mask_png, load_png, rgb_pad, save_mask_png, save_png, Background, InpaintMask, PaddingStrategy,
    PaddingVariant, RgbaImage,
};
use crate::rng::mix;
use crate::synth::{synth_corpus, synth_sample};

type Out<'a> = &'a mut dyn Write;

fn require<T: Clone>(v: &Option<T>, key: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required key `{key}` (flag --{})", key.replace('_', "-"))))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `<artifact>.json`, or `<dir>/config.json` for directory outputs.
fn sidecar_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        return artifact.join("config.json");
    }
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    artifact.with_file_name(name)
}

fn sidecar(artifact: &Path, command: &str, config: &impl Serialize, result: Value) -> Result<(), CliError> {
    let body = json!({
        "command": command,
        "tool": version_json(),
        "config": config,
        "result": result,
    });
    write_json(&sidecar_path(artifact), &body)
}

fn progress(err: Out, label: &str, step: usize, total: usize, loss: f64) {
    let every = (total / 20).max(1);
    if (step + 1).is_multiple_of(every) || step + 1 == total {
        let _ = writeln!(err, "{label} {}/{total} loss {loss:.5}", step + 1);
    }
}

/// PNG files of a directory in name order, with prompts from an optional
/// `prompts.json` (file name to prompt; default: the file stem).
pub(crate) fn load_corpus(dir: &Path) -> Result<Vec<(RgbaImage, String)>, CliError> {
    let prompts: BTreeMap<String, String> = match std::fs::read_to_string(dir.join("prompts.json")) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(e.into()),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Domain(format!("cannot read corpus {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Domain(format!("no PNG files in {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().to_string();
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let prompt = prompts.get(&name).cloned().unwrap_or(stem);
            Ok((read_png(p)?, prompt))
        })
        .collect()
}

fn read_png(p: &Path) -> Result<RgbaImage, CliError> {
    load_png(p).map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))
}

fn read_mask(p: &Path) -> Result<InpaintMask, CliError> {
    load_mask_png(p).map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))
}

fn synth_items(count: usize, size: usize, seed: u64) -> Vec<(RgbaImage, String)> {
    (0..count as u64)
        .map(|i| {
            let s = synth_sample(size, size, seed, i);
            (s.image, s.prompt)
        })
        .collect()
}

// composite -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeConfig {
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// `white`, `black`, `grey` or `#rrggbb`.
    pub background: String,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self { image: None, out: None, background: "white".into() }
    }
}

#[derive(Args, Debug)]
pub struct CompositeArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// white, black, grey or #rrggbb
    #[arg(long)]
    background: Option<String>,
    #[command(flatten)]
    common: Common,
}

pub fn composite(a: CompositeArgs, _out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default().opt("image", &a.image).opt("out", &a.out).opt("background", &a.background);
    let cfg: CompositeConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (image, out) = (require(&cfg.image, "image")?, require(&cfg.out, "out")?);
    let bg = Background::parse(&cfg.background).map_err(|e| CliError::Usage(e.to_string()))?;
    save_png(&composite_over(&read_png(&image)?, bg).to_rgba(), &out)?;
    sidecar(&out, "composite", &cfg, Value::Null)
}

// pad -----------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PadConfig {
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub strategy: PaddingVariant,
    pub alpha_threshold: f64,
    pub expansion: usize,
}

impl Default for PadConfig {
    fn default() -> Self {
        let p = PaddingStrategy::default();
        Self { image: None, out: None, strategy: p.variant, alpha_threshold: p.alpha_threshold, expansion: p.expansion }
    }
}

#[derive(Args, Debug)]
pub struct PadArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// content-extension, telea, telea-localized or grey
    #[arg(long)]
    strategy: Option<PaddingVariant>,
    /// Pixels with alpha below this are padded
    #[arg(long)]
    alpha_threshold: Option<f64>,
    /// Band half-width for telea-localized
    #[arg(long)]
    expansion: Option<usize>,
    #[command(flatten)]
    common: Common,
}

pub fn pad(a: PadArgs, _out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("image", &a.image)
        .opt("out", &a.out)
        .opt("strategy", &a.strategy)
        .opt("alpha_threshold", &a.alpha_threshold)
        .opt("expansion", &a.expansion);
    let cfg: PadConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (image, out) = (require(&cfg.image, "image")?, require(&cfg.out, "out")?);
    let strategy =
        PaddingStrategy { variant: cfg.strategy, alpha_threshold: cfg.alpha_threshold, expansion: cfg.expansion };
    save_png(&rgb_pad(&read_png(&image)?, &strategy)?, &out)?;
    sidecar(&out, "pad", &cfg, Value::Null)
}

// degrade -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeConfig {
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub label_out: Option<PathBuf>,
    pub seed: u64,
    #[serde(flatten)]
    pub spec: DegradationSpec,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the low-quality label map (PNG mask)
    #[arg(long)]
    label_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// dilate-blur, solid-fill-dilate or segmentation-proxy
    #[arg(long)]
    mode: Option<DegradeMode>,
    /// Structuring element side in pixels
    #[arg(long)]
    dilation: Option<usize>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    matte_threshold: Option<f64>,
    #[command(flatten)]
    common: Common,
}

pub fn degrade(a: DegradeArgs, _out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("image", &a.image)
        .opt("out", &a.out)
        .opt("label_out", &a.label_out)
        .opt("seed", &a.seed)
        .opt("mode", &a.mode)
        .opt("dilation", &a.dilation)
        .opt("blur_sigma", &a.blur_sigma)
        .opt("matte_threshold", &a.matte_threshold);
    let cfg: DegradeConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (image, out) = (require(&cfg.image, "image")?, require(&cfg.out, "out")?);
    cfg.spec.validate()?;
    let d = aeq::degrade(&read_png(&image)?, &cfg.spec, cfg.seed)?;
    save_png(&d.image, &out)?;
    if let Some(p) = &cfg.label_out {
        save_mask_png(&d.label, p)?;
        sidecar(p, "degrade", &cfg, Value::Null)?;
    }
    sidecar(&out, "degrade", &cfg, json!({ "low_quality_pixels": d.label.count() }))
}

// aeq-train -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeqTrainConfig {
    /// Directory of clean PNGs; synthetic images are used when unset.
    pub corpus: Option<PathBuf>,
    pub synth_count: usize,
    pub synth_size: usize,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for AeqTrainConfig {
    fn default() -> Self {
        Self { corpus: None, synth_count: 60, synth_size: 128, out: None, train: TrainConfig::default() }
    }
}

#[derive(Args, Debug)]
pub struct AeqTrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    synth_count: Option<usize>,
    #[arg(long)]
    synth_size: Option<usize>,
    /// Checkpoint path
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Seeds both batches and classifier initialization
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

pub fn aeq_train(a: AeqTrainArgs, _out: Out, err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("corpus", &a.corpus)
        .opt("synth_count", &a.synth_count)
        .opt("synth_size", &a.synth_size)
        .opt("out", &a.out)
        .opt("iterations", &a.iterations)
        .opt("batch_size", &a.batch_size)
        .opt("lr", &a.lr)
        .opt("seed", &a.seed)
        .opt("classifier.seed", &a.seed);
    let cfg: AeqTrainConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let out = require(&cfg.out, "out")?;
    cfg.train.validate()?;
    let corpus: Vec<RgbaImage> = match &cfg.corpus {
        Some(dir) => load_corpus(dir)?.into_iter().map(|(img, _)| img).collect(),
        None => synth_corpus(cfg.synth_count, cfg.synth_size, cfg.synth_size, cfg.train.seed),
    };
    let total = cfg.train.iterations;
    let (clf, report) = train_classifier(&corpus, &cfg.train, |i, l| progress(err, "aeq-train", i, total, l))?;
    clf.save(&out)?;
    let k = (report.losses.len() / 10).max(1);
    let result = json!({
        "iterations": report.iterations,
        "parameters": clf.num_parameters(),
        "head_mean_loss": report.head_mean(k),
        "tail_mean_loss": report.tail_mean(k),
        "losses": report.losses,
    });
    sidecar(&out, "aeq-train", &cfg, result)
}

// aeq-score -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AeqScoreConfig {
    pub image: Option<PathBuf>,
    /// Inpainting mask; the whole image is scored when unset.
    pub mask: Option<PathBuf>,
    pub clf: Option<PathBuf>,
    /// Also write the report here.
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AeqScoreArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Classifier checkpoint
    #[arg(long)]
    clf: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub fn aeq_score(a: AeqScoreArgs, out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default().opt("image", &a.image).opt("mask", &a.mask).opt("clf", &a.clf).opt("out", &a.out);
    let cfg: AeqScoreConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (image, clf_path) = (require(&cfg.image, "image")?, require(&cfg.clf, "clf")?);
    let img = read_png(&image)?;
    let mask = cfg.mask.as_deref().map(read_mask).transpose()?;
    let clf = AeqClassifier::load(&clf_path)?;
    let report = compute_aeq(&img, mask.as_ref(), &clf)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    if let Some(p) = &cfg.out {
        write_json(p, &report)?;
        sidecar(p, "aeq-score", &cfg, Value::Null)?;
    }
    Ok(())
}

// pretrain ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainCmdConfig {
    /// Directory of RGBA PNGs; the last `val_count` are held out.
    pub corpus: Option<PathBuf>,
    pub synth_count: usize,
    pub val_count: usize,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub adapter: AdapterConfig,
}

impl Default for PretrainCmdConfig {
    fn default() -> Self {
        Self { corpus: None, synth_count: 200, val_count: 16, out: None, adapter: AdapterConfig::default() }
    }
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    synth_count: Option<usize>,
    #[arg(long)]
    val_count: Option<usize>,
    /// Checkpoint path
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square image side; latents are a quarter of it
    #[arg(long)]
    image_size: Option<usize>,
    /// Sets `pretrain.max_steps`
    #[arg(long)]
    max_steps: Option<usize>,
    /// Sets `pretrain.lr`
    #[arg(long)]
    lr: Option<f64>,
    /// Sets `pretrain.batch_size`
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sets `padding.variant`
    #[arg(long)]
    padding: Option<PaddingVariant>,
    #[command(flatten)]
    common: Common,
}

/// Train and validation items for adapter commands.
type Captioned = Vec<(RgbaImage, String)>;

fn adapter_corpus(
    corpus: &Option<PathBuf>,
    synth_count: usize,
    val_count: usize,
    size: usize,
    seed: u64,
) -> Result<(Captioned, Captioned), CliError> {
    if val_count == 0 {
        return Err(CliError::Usage("val_count must be positive".into()));
    }
    match corpus {
        Some(dir) => {
            let mut items = load_corpus(dir)?;
            if items.len() <= val_count {
                return Err(CliError::Domain(format!(
                    "corpus has {} images; need more than val_count = {val_count}",
                    items.len()
                )));
            }
            let val = items.split_off(items.len() - val_count);
            Ok((items, val))
        }
        None => Ok((synth_items(synth_count, size, seed), synth_items(val_count, size, mix(seed, 0x0056_414c)))),
    }
}

fn stage_json(r: &StageReport) -> Value {
    json!({
        "stage": r.stage,
        "steps": r.steps,
        "initial_validation": r.initial_validation(),
        "final_validation": r.final_validation(),
        "relative_improvement": r.relative_improvement(),
        "validation": r.validation,
        "losses": r.losses,
    })
}

pub fn pretrain(a: PretrainArgs, _out: Out, err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("corpus", &a.corpus)
        .opt("synth_count", &a.synth_count)
        .opt("val_count", &a.val_count)
        .opt("out", &a.out)
        .opt("seed", &a.seed)
        .opt("image_size", &a.image_size)
        .opt("pretrain.max_steps", &a.max_steps)
        .opt("pretrain.lr", &a.lr)
        .opt("pretrain.batch_size", &a.batch_size)
        .opt("padding.variant", &a.padding);
    let cfg: PretrainCmdConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let out = require(&cfg.out, "out")?;
    let mut model = AdapterModel::new(cfg.adapter.clone())?;
    let size = cfg.adapter.image_size;
    let (train, val) = adapter_corpus(&cfg.corpus, cfg.synth_count, cfg.val_count, size, cfg.adapter.seed)?;
    let (train, val) = (encode_corpus(&model, &train)?, encode_corpus(&model, &val)?);
    let total = cfg.adapter.pretrain.max_steps;
    let report = pretrain_backbone(&mut model, &train, &val, |i, l| progress(err, "pretrain", i, total, l))?;
    model.save(&out)?;
    sidecar(&out, "pretrain", &cfg, json!({ "pretrain": stage_json(&report), "backbone_hash": model.backbone_hash() }))
}

// adapter-train -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterTrainConfig {
    /// Checkpoint to continue from (pretrained, or stage 1 for `stages = "2"`).
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub synth_count: usize,
    pub val_count: usize,
    pub out: Option<PathBuf>,
    /// `1`, `2` or `both`.
    pub stages: String,
    pub seed: u64,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub validation_batches: usize,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        let d = AdapterConfig::default();
        Self {
            model: None,
            corpus: None,
            synth_count: 200,
            val_count: 16,
            out: None,
            stages: "both".into(),
            seed: d.seed,
            stage1: d.stage1,
            stage2: d.stage2,
            validation_batches: d.validation_batches,
        }
    }
}

#[derive(Args, Debug)]
pub struct AdapterTrainArgs {
    /// Input checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    synth_count: Option<usize>,
    #[arg(long)]
    val_count: Option<usize>,
    /// Output checkpoint
    #[arg(long)]
    out: Option<PathBuf>,
    /// 1, 2 or both
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sets `stage1.steps`
    #[arg(long)]
    stage1_steps: Option<usize>,
    /// Sets `stage2.steps`
    #[arg(long)]
    stage2_steps: Option<usize>,
    #[command(flatten)]
    common: Common,
}

pub fn adapter_train(a: AdapterTrainArgs, _out: Out, err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("model", &a.model)
        .opt("corpus", &a.corpus)
        .opt("synth_count", &a.synth_count)
        .opt("val_count", &a.val_count)
        .opt("out", &a.out)
        .opt("stages", &a.stages)
        .opt("seed", &a.seed)
        .opt("stage1.steps", &a.stage1_steps)
        .opt("stage2.steps", &a.stage2_steps);
    let cfg: AdapterTrainConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (input, out) = (require(&cfg.model, "model")?, require(&cfg.out, "out")?);
    let (one, two) = match cfg.stages.as_str() {
        "1" => (true, false),
        "2" => (false, true),
        "both" => (true, true),
        s => return Err(CliError::Usage(format!("stages must be 1, 2 or both, got {s:?}"))),
    };
    let mut model = AdapterModel::load(&input)?;
    model.config.seed = cfg.seed;
    model.config.stage1 = cfg.stage1.clone();
    model.config.stage2 = cfg.stage2.clone();
    model.config.validation_batches = cfg.validation_batches;
    model.config.validate()?;
    let size = model.config.image_size;
    let (train, val) = adapter_corpus(&cfg.corpus, cfg.synth_count, cfg.val_count, size, cfg.seed)?;
    let (train, val) = (encode_corpus(&model, &train)?, encode_corpus(&model, &val)?);
    let hash = model.backbone_hash();
    let mut result = serde_json::Map::new();
    if one {
        let total = cfg.stage1.steps;
        let r = train_stage1(&mut model, &train, &val, |i, l| progress(err, "stage1", i, total, l))?;
        result.insert("stage1".into(), stage_json(&r));
    }
    if two {
        let total = cfg.stage2.steps;
        let r = train_stage2(&mut model, &train, &val, |i, l| progress(err, "stage2", i, total, l))?;
        result.insert("stage2".into(), stage_json(&r));
    }
    if model.backbone_hash() != hash {
        return Err(CliError::Domain("backbone changed during adapter training".into()));
    }
    result.insert("backbone_hash".into(), Value::String(hash));
    model.save(&out)?;
    sidecar(&out, "adapter-train", &cfg, Value::Object(result))
}

// inpaint -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintConfig {
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub prompt: String,
    /// `pure` or `blended`.
    pub strategy: String,
    /// Blended-noise strength; 0.99 when unset.
    pub strength: Option<f64>,
    pub steps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            model: None,
            image: None,
            mask: None,
            prompt: String::new(),
            strategy: "blended".into(),
            strength: None,
            steps: 50,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct InpaintArgs {
    /// Adapter checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    /// pure or blended
    #[arg(long)]
    strategy: Option<String>,
    /// Blended-noise strength in [0, 1]
    #[arg(long)]
    strength: Option<f64>,
    /// Sampling steps
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn parse_strategy(name: &str, strength: Option<f64>) -> Result<NoiseStrategy, CliError> {
    let s: NoiseStrategy = name.parse().map_err(|e: adapter::AdapterError| CliError::Usage(e.to_string()))?;
    match (s, strength) {
        (s, None) => Ok(s),
        (NoiseStrategy::BlendedNoise(_), Some(v)) if (0.0..=1.0).contains(&v) => Ok(NoiseStrategy::BlendedNoise(v)),
        (NoiseStrategy::BlendedNoise(_), Some(v)) => Err(CliError::Usage(format!("strength must be in [0, 1], got {v}"))),
        (NoiseStrategy::PureNoise, Some(_)) => Err(CliError::Usage("strength only applies to the blended strategy".into())),
    }
}

pub fn inpaint(a: InpaintArgs, _out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("model", &a.model)
        .opt("image", &a.image)
        .opt("mask", &a.mask)
        .opt("prompt", &a.prompt)
        .opt("strategy", &a.strategy)
        .opt("strength", &a.strength)
        .opt("steps", &a.steps)
        .opt("seed", &a.seed)
        .opt("out", &a.out);
    let cfg: InpaintConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let model_path = require(&cfg.model, "model")?;
    let (image, mask, out) = (require(&cfg.image, "image")?, require(&cfg.mask, "mask")?, require(&cfg.out, "out")?);
    let strategy = parse_strategy(&cfg.strategy, cfg.strength)?;
    let model = AdapterModel::load(&model_path)?;
    let img = read_png(&image)?;
    let mask = read_mask(&mask)?;
    let result = adapter::inpaint(&model, &img, &mask, &cfg.prompt, strategy, cfg.steps, cfg.seed)?;
    save_png(&result, &out)?;
    sidecar(&out, "inpaint", &cfg, json!({ "model_stage": model.stage, "strategy": strategy }))
}

// bench ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchCmdConfig {
    pub manifest: Option<PathBuf>,
    /// `identity`, `grey-fill`, or an adapter checkpoint path.
    pub model: String,
    /// Classifier checkpoint for AEQ; AEQ is skipped when unset.
    pub clf: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Each `pure`, `blended` or `blended:<strength>`.
    pub strategies: Vec<String>,
    pub steps: usize,
    pub seed: u64,
    pub prompt: PromptKind,
    pub external: Vec<ExternalMetric>,
}

impl Default for BenchCmdConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            model: "identity".into(),
            clf: None,
            out_dir: None,
            strategies: vec!["pure".into(), "blended".into()],
            steps: 50,
            seed: 0,
            prompt: PromptKind::Full,
            external: Vec::new(),
        }
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Suite manifest (JSON array of cases)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// identity, grey-fill or an adapter checkpoint
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    clf: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Sampling strategies (repeatable)
    #[arg(long = "strategy")]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// full or simple
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    common: Common,
}

pub fn bench(a: BenchArgs, out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("manifest", &a.manifest)
        .opt("model", &a.model)
        .opt("clf", &a.clf)
        .opt("out_dir", &a.out_dir)
        .opt("strategies", &a.strategies)
        .opt("steps", &a.steps)
        .opt("seed", &a.seed)
        .opt("prompt", &a.prompt);
    let cfg: BenchCmdConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (manifest, out_dir) = (require(&cfg.manifest, "manifest")?, require(&cfg.out_dir, "out_dir")?);
    let strategies =
        cfg.strategies.iter().map(|s| parse_strategy(s, None)).collect::<Result<Vec<_>, _>>()?;
    let cases = load_manifest(&manifest)?;
    let clf = cfg.clf.as_ref().map(AeqClassifier::load).transpose()?;
    let adapter_model = match cfg.model.as_str() {
        "identity" | "grey-fill" => None,
        path => Some(AdapterModel::load(path)?),
    };
    let model: Box<dyn InpaintModel + '_> = match (cfg.model.as_str(), &adapter_model) {
        ("identity", _) => Box::new(Identity),
        ("grey-fill", _) => Box::new(GreyFill),
        (_, Some(m)) => Box::new(AdapterInpainter { model: m, steps: cfg.steps }),
        _ => unreachable!("checkpoint loaded above"),
    };
    let suite = SuiteConfig { strategies, seed: cfg.seed, prompt: cfg.prompt, external: cfg.external.clone() };
    let work = out_dir.join("composites");
    let work_dir = (!suite.external.is_empty()).then_some(work.as_path());
    let report = run_suite(&cases, model.as_ref(), &suite, clf.as_ref(), work_dir)?;
    write_report(&report, &out_dir)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report.aggregates)?)?;
    sidecar(&out_dir, "bench", &cfg, json!({ "cases": cases.len(), "rows": report.rows.len() }))
}

// grad-check ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    /// `aeq`, `adapter` or `all`.
    pub target: String,
    pub seed: u64,
    pub h: f64,
    pub tol: f64,
    /// Elements perturbed per tensor; every element when unset.
    pub per_tensor: Option<usize>,
    pub aeq_width: usize,
    pub aeq_resolution: usize,
    pub adapter_latent: usize,
    pub adapter: AdapterConfig,
    pub out: Option<PathBuf>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            target: "all".into(),
            seed: 0,
            h: 1e-5,
            tol: 1e-4,
            per_tensor: Some(3),
            aeq_width: 4,
            aeq_resolution: 16,
            adapter_latent: 8,
            adapter: AdapterConfig::default(),
            out: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// aeq, adapter or all
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Finite-difference step
    #[arg(long)]
    h: Option<f64>,
    /// Relative tolerance
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    per_tensor: Option<usize>,
    /// Full report path
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn summary(r: &GradCheckReport) -> Value {
    json!({
        "passed": r.passed,
        "max_rel_err": r.max_rel_err,
        "checked": r.entries.len(),
        "worst": r.worst(),
    })
}

pub fn grad_check(a: GradCheckArgs, out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("target", &a.target)
        .opt("seed", &a.seed)
        .opt("h", &a.h)
        .opt("tol", &a.tol)
        .opt("per_tensor", &a.per_tensor)
        .opt("out", &a.out);
    let cfg: GradCheckConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let (do_aeq, do_adapter) = match cfg.target.as_str() {
        "aeq" => (true, false),
        "adapter" => (false, true),
        "all" => (true, true),
        t => return Err(CliError::Usage(format!("target must be aeq, adapter or all, got {t:?}"))),
    };
    let mut reports = BTreeMap::new();
    if do_aeq {
        let r = aeq::loss_grad_check(cfg.aeq_width, cfg.aeq_resolution, cfg.seed, cfg.h, cfg.tol, cfg.per_tensor)?;
        reports.insert("aeq", r);
    }
    if do_adapter {
        let r = adapter::loss_grad_check(cfg.adapter.clone(), cfg.adapter_latent, cfg.seed, cfg.h, cfg.tol, cfg.per_tensor)?;
        reports.insert("adapter", r);
    }
    let sums: BTreeMap<&str, Value> = reports.iter().map(|(k, r)| (*k, summary(r))).collect();
    writeln!(out, "{}", serde_json::to_string_pretty(&sums)?)?;
    if let Some(p) = &cfg.out {
        write_json(p, &reports)?;
        sidecar(p, "grad-check", &cfg, json!(sums))?;
    }
    let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed).map(|(k, _)| *k).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(format!("gradient check failed for {}", failed.join(", "))))
    }
}

// synth ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Kind of the per-image masks under `masks/`.
    pub mask_kind: MaskKind,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 16, width: 64, height: 64, seed: 0, out_dir: None, mask_kind: MaskKind::Bezier }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// stroke, rectangle, bezier or object-from-alpha
    #[arg(long)]
    mask_kind: Option<String>,
    #[command(flatten)]
    common: Common,
}

pub fn synth(a: SynthArgs, _out: Out, _err: Out) -> Result<(), CliError> {
    let flags = Flags::default()
        .opt("count", &a.count)
        .opt("width", &a.width)
        .opt("height", &a.height)
        .opt("seed", &a.seed)
        .opt("out_dir", &a.out_dir)
        .opt("mask_kind", &a.mask_kind);
    let cfg: SynthConfig = resolve(a.common.config.as_deref(), flags.0, &a.common.set)?;
    let dir = require(&cfg.out_dir, "out_dir")?;
    if cfg.width == 0 || cfg.height == 0 || cfg.count == 0 {
        return Err(CliError::Usage("count, width and height must be positive".into()));
    }
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut prompts = BTreeMap::new();
    let mut manifest = Vec::new();
    for i in 0..cfg.count {
        let s = synth_sample(cfg.width, cfg.height, cfg.seed, i as u64);
        let name = format!("img_{i:04}.png");
        save_png(&s.image, dir.join(&name))?;
        prompts.insert(name.clone(), s.prompt.clone());
        let spec = MaskSpec::new(cfg.mask_kind, mix(cfg.seed, i as u64));
        let mask_name = format!("masks/img_{i:04}.png");
        save_mask_png(generate_mask(&spec, cfg.width, cfg.height, Some(&s.image))?.mask(), dir.join(&mask_name))?;
        manifest.push(ManifestEntry {
            id: Some(format!("img_{i:04}")),
            image: PathBuf::from(&name),
            mask: Some(PathBuf::from(mask_name)),
            mask_spec: None,
            prompt: s.prompt,
            prompt_simple: s.prompt_simple,
        });
    }
    write_json(&dir.join("prompts.json"), &prompts)?;
    write_json(&dir.join("suite.json"), &manifest)?;
    sidecar(&dir, "synth", &cfg, json!({ "images": cfg.count }))
}
