//! Cases, per-case evaluation, the model-under-test interface and the
//! suite runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mask::{generate_mask, MaskSpec};
use super::metrics::{psnr, ssim, ExternalMetric};
use super::BenchError;
use crate::adapter::{inpaint, AdapterModel, NoiseStrategy};
use crate::aeq::{compute_aeq, AeqClassifier};
use crate::rgba::{blend_with_original, composite_over, load_mask_png, load_png, save_png, Background, InpaintMask, RgbaImage};
use crate::rng::{fnv1a, mix};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCase {
    pub id: String,
    pub image: RgbaImage,
    pub mask: InpaintMask,
    pub prompt: String,
    pub prompt_simple: String,
}

impl BenchmarkCase {
    pub fn new(
        id: impl Into<String>,
        image: RgbaImage,
        mask: InpaintMask,
        prompt: impl Into<String>,
        prompt_simple: impl Into<String>,
    ) -> Result<Self, BenchError> {
        mask.check_dims(image.width(), image.height())?;
        Ok(Self { id: id.into(), image, mask, prompt: prompt.into(), prompt_simple: prompt_simple.into() })
    }
}

/// One entry of a suite manifest (a JSON array of these). Paths are
/// relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_spec: Option<MaskSpec>,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub prompt_simple: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<BenchmarkCase>, BenchError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let entries: Vec<ManifestEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let image = load_png(base.join(&e.image))?;
            let mask = match (&e.mask, &e.mask_spec) {
                (Some(m), None) => load_mask_png(base.join(m))?,
                (None, Some(spec)) => generate_mask(spec, image.width(), image.height(), Some(&image))?,
                _ => return Err(BenchError::Manifest(format!("entry {i}: give exactly one of mask, mask_spec"))),
            };
            let id = e.id.unwrap_or_else(|| format!("case-{i:03}"));
            BenchmarkCase::new(id, image, mask, e.prompt, e.prompt_simple)
        })
        .collect()
}

/// Scores of one result. PSNR and SSIM are means of the white and black
/// composite scores; AEQ is computed once from the RGBA result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_white: f64,
    pub psnr_black: f64,
    pub ssim_white: f64,
    pub ssim_black: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aeq: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
}

/// Classifier and external metrics used by [`evaluate`].
#[derive(Default)]
pub struct Scorers<'a> {
    pub classifier: Option<&'a AeqClassifier>,
    pub external: &'a [ExternalMetric],
    /// Where composites are written for external metrics.
    pub work_dir: Option<&'a Path>,
}

/// Fails unless every unmasked pixel of `result` equals the original.
pub fn check_blend_contract(case: &BenchmarkCase, result: &RgbaImage) -> Result<(), BenchError> {
    if result.dims() != case.image.dims() {
        return Err(BenchError::BlendContract(format!(
            "result is {}x{}, input is {}x{}",
            result.width(),
            result.height(),
            case.image.width(),
            case.image.height()
        )));
    }
    let w = result.width();
    for i in 0..result.len() {
        if case.mask.is_masked(i) {
            continue;
        }
        if result.alpha()[i] != case.image.alpha()[i] || result.rgb_at(i) != case.image.rgb_at(i) {
            return Err(BenchError::BlendContract(format!("pixel ({}, {}) differs outside the mask", i % w, i / w)));
        }
    }
    Ok(())
}

/// Scores `result` against the case's original, both composited on white
/// and on black.
pub fn evaluate(
    case: &BenchmarkCase,
    result: &RgbaImage,
    scorers: &Scorers,
    tag: &str,
) -> Result<CaseMetrics, BenchError> {
    check_blend_contract(case, result)?;
    let (rw, rb) = (composite_over(result, Background::WHITE), composite_over(result, Background::BLACK));
    let (ow, ob) = (composite_over(&case.image, Background::WHITE), composite_over(&case.image, Background::BLACK));
    let (psnr_white, psnr_black) = (psnr(&rw, &ow)?, psnr(&rb, &ob)?);
    let (ssim_white, ssim_black) = (ssim(&rw, &ow)?, ssim(&rb, &ob)?);
    let aeq = scorers.classifier.map(|clf| compute_aeq(result, Some(&case.mask), clf)).transpose()?.map(|r| r.score);
    let mut external = BTreeMap::new();
    if !scorers.external.is_empty() {
        let dir = scorers
            .work_dir
            .ok_or_else(|| BenchError::Metric("external metrics need a work directory".into()))?;
        std::fs::create_dir_all(dir)?;
        let (pw, pb) = (dir.join(format!("{tag}-white.png")), dir.join(format!("{tag}-black.png")));
        save_png(&rw.to_rgba(), &pw)?;
        save_png(&rb.to_rgba(), &pb)?;
        for m in scorers.external {
            external.insert(m.name.clone(), m.score(&pw, &pb)?);
        }
    }
    Ok(CaseMetrics {
        psnr: 0.5 * (psnr_white + psnr_black),
        ssim: 0.5 * (ssim_white + ssim_black),
        psnr_white,
        psnr_black,
        ssim_white,
        ssim_black,
        aeq,
        external,
    })
}

/// A model under test. Implementations must return results that already
/// keep the unmasked region of `image`.
pub trait InpaintModel {
    fn name(&self) -> String;
    fn inpaint(
        &self,
        image: &RgbaImage,
        mask: &InpaintMask,
        prompt: &str,
        strategy: NoiseStrategy,
        seed: u64,
    ) -> Result<RgbaImage, BenchError>;
}

/// Returns the input unchanged.
pub struct Identity;

impl InpaintModel for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn inpaint(&self, image: &RgbaImage, _: &InpaintMask, _: &str, _: NoiseStrategy, _: u64) -> Result<RgbaImage, BenchError> {
        Ok(image.clone())
    }
}

/// Fills the mask with opaque mid-grey.
pub struct GreyFill;

impl InpaintModel for GreyFill {
    fn name(&self) -> String {
        "grey-fill".into()
    }

    fn inpaint(&self, image: &RgbaImage, mask: &InpaintMask, _: &str, _: NoiseStrategy, _: u64) -> Result<RgbaImage, BenchError> {
        let grey = RgbaImage::filled(image.width(), image.height(), [0.5; 3], 1.0)?;
        Ok(blend_with_original(&grey, image, mask)?)
    }
}

/// The two-frame adapter with a fixed number of sampling steps.
pub struct AdapterInpainter<'a> {
    pub model: &'a AdapterModel,
    pub steps: usize,
}

impl InpaintModel for AdapterInpainter<'_> {
    fn name(&self) -> String {
        format!("adapter-{:?}", self.model.stage).to_lowercase()
    }

    fn inpaint(
        &self,
        image: &RgbaImage,
        mask: &InpaintMask,
        prompt: &str,
        strategy: NoiseStrategy,
        seed: u64,
    ) -> Result<RgbaImage, BenchError> {
        Ok(inpaint(self.model, image, mask, prompt, strategy, self.steps, seed)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Full,
    Simple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub strategies: Vec<NoiseStrategy>,
    pub seed: u64,
    pub prompt: PromptKind,
    #[serde(default)]
    pub external: Vec<ExternalMetric>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            strategies: vec![NoiseStrategy::PureNoise, NoiseStrategy::BlendedNoise(0.99)],
            seed: 0,
            prompt: PromptKind::Full,
            external: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub strategy: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CaseMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Arithmetic means over the successful rows of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: String,
    pub cases: usize,
    pub failed: usize,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aeq: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub model: String,
    pub config: SuiteConfig,
    pub rows: Vec<CaseRow>,
    pub aggregates: Vec<Aggregate>,
}

fn strategy_label(s: NoiseStrategy) -> String {
    match s {
        NoiseStrategy::PureNoise => "pure-noise".into(),
        NoiseStrategy::BlendedNoise(v) => format!("blended-noise-{v}"),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn aggregate(strategy: &str, rows: &[&CaseRow]) -> Aggregate {
    let ok: Vec<&CaseMetrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let names: std::collections::BTreeSet<&String> = ok.iter().flat_map(|m| m.external.keys()).collect();
    Aggregate {
        strategy: strategy.to_string(),
        cases: rows.len(),
        failed: rows.len() - ok.len(),
        psnr: mean(ok.iter().map(|m| m.psnr)).unwrap_or(f64::NAN),
        ssim: mean(ok.iter().map(|m| m.ssim)).unwrap_or(f64::NAN),
        aeq: mean(ok.iter().filter_map(|m| m.aeq)),
        external: names
            .into_iter()
            .filter_map(|n| mean(ok.iter().filter_map(|m| m.external.get(n).copied())).map(|v| (n.clone(), v)))
            .collect(),
    }
}

/// Runs every case under every strategy. A failing case becomes a row with
/// an error; the suite carries on. Rows are sorted by case id, then by
/// strategy order.
pub fn run_suite(
    cases: &[BenchmarkCase],
    model: &dyn InpaintModel,
    config: &SuiteConfig,
    classifier: Option<&AeqClassifier>,
    work_dir: Option<&Path>,
) -> Result<SuiteReport, BenchError> {
    if config.strategies.is_empty() {
        return Err(BenchError::Manifest("no sampling strategies configured".into()));
    }
    let mut order: Vec<&BenchmarkCase> = cases.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if order.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(BenchError::Manifest("case ids must be unique".into()));
    }
    let scorers = Scorers { classifier, external: &config.external, work_dir };
    let mut rows = Vec::new();
    for case in order {
        let seed = mix(config.seed, fnv1a(case.id.as_bytes()));
        let prompt = match config.prompt {
            PromptKind::Full => &case.prompt,
            PromptKind::Simple => &case.prompt_simple,
        };
        for &strategy in &config.strategies {
            let label = strategy_label(strategy);
            let outcome = model
                .inpaint(&case.image, &case.mask, prompt, strategy, seed)
                .and_then(|res| evaluate(case, &res, &scorers, &format!("{}-{label}", case.id)));
            let (metrics, error) = match outcome {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(CaseRow { case_id: case.id.clone(), strategy: label, seed, metrics, error });
        }
    }
    let aggregates = config
        .strategies
        .iter()
        .map(|&s| {
            let label = strategy_label(s);
            let mine: Vec<&CaseRow> = rows.iter().filter(|r| r.strategy == label).collect();
            aggregate(&label, &mine)
        })
        .collect();
    Ok(SuiteReport { model: model.name(), config: config.clone(), rows, aggregates })
}
