//! Evaluation harness: inpainting masks, white/black composite scoring and
//! suite reports.

mod mask;
mod metrics;
mod report;
mod suite;

pub use mask::{generate_mask, MaskKind, MaskSpec, COVERAGE_RANGE};
pub use metrics::{psnr, ssim, ExternalMetric, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{plotted_metrics, to_csv, to_json, to_svg, write_report};
pub use suite::{
    check_blend_contract, evaluate, load_manifest, run_suite, AdapterInpainter, Aggregate, BenchmarkCase, CaseMetrics,
    CaseRow, GreyFill, Identity, InpaintModel, ManifestEntry, PromptKind, Scorers, SuiteConfig, SuiteReport,
};

use thiserror::Error;

use crate::adapter::AdapterError;
use crate::aeq::AeqError;
use crate::edge::EdgeError;
use crate::rgba::ImageError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("blend contract violated: {0}")]
    BlendContract(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Aeq(#[from] AeqError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[cfg(test)]
mod tests;
