//! Reference metrics on composites and the external-metric line protocol.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::rgba::RgbImage;

/// Reported for identical images instead of infinity.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check(a: &RgbImage, b: &RgbImage) -> Result<(), BenchError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(BenchError::Metric(format!(
            "composite sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over all channels, peak 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, BenchError> {
    check(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over "valid" positions only.
fn filter(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..n).map(|j| k[j] * x[y * w + x0 + j]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..n).map(|j| k[j] * rows[(y0 + j) * ow + x0]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of the luminance planes with an 11x11 Gaussian window
/// (sigma 1.5), shrunk to the largest odd size that fits small images.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, BenchError> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let size = SSIM_WINDOW.min(w.min(h));
    let size = if size % 2 == 0 { size - 1 } else { size };
    let k = window(size);
    let (la, lb) = (a.luminance(), b.luminance());
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let (ma, ow, oh) = filter(&la, w, h, &k);
    let (mb, ..) = filter(&lb, w, h, &k);
    let (saa, ..) = filter(&prod(&la, &la), w, h, &k);
    let (sbb, ..) = filter(&prod(&lb, &lb), w, h, &k);
    let (sab, ..) = filter(&prod(&la, &lb), w, h, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..ow * oh)
        .map(|i| {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (ow * oh) as f64)
}

/// An executable scoring composite pairs: it reads lines of
/// `<white.png> <black.png>` on stdin and answers each with one float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetric {
    pub name: String,
    pub command: Vec<String>,
}

impl ExternalMetric {
    pub fn score(&self, white: &Path, black: &Path) -> Result<f64, BenchError> {
        let (prog, args) = self
            .command
            .split_first()
            .ok_or_else(|| BenchError::Metric(format!("metric {:?} has an empty command", self.name)))?;
        let fail = |e: String| BenchError::Metric(format!("metric {:?}: {e}", self.name));
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        {
            let mut stdin = child.stdin.take().expect("piped");
            writeln!(stdin, "{} {}", white.display(), black.display()).map_err(|e| fail(e.to_string()))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let line = text.lines().next().unwrap_or("").trim();
        let v: f64 = line.parse().map_err(|_| fail(format!("expected a number, got {line:?}")))?;
        if !v.is_finite() {
            return Err(fail(format!("non-finite score {v}")));
        }
        Ok(v)
    }
}
