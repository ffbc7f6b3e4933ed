//! Raster primitives shared by the edge-quality metric and the degradation
//! synthesizer: Gaussian blur, Canny edges, square dilation, value noise.

mod blur;
mod canny;
mod morph;
mod noise;
mod plane;

pub use blur::{gaussian_blur, gaussian_kernel, reflect_index};
pub use canny::{canny, sobel_magnitude, EdgeMask, CANNY_KERNEL, CANNY_KERNEL_SUM};
pub use morph::{dilate, dilate_plane};
pub use noise::{fractal_noise, NoiseSpec};
pub use plane::{BinaryMask, Plane};

use thiserror::Error;

/// Canny threshold (0-255 scale) defining the alpha edge band.
pub const EDGE_CANNY_THRESHOLD: f64 = 20.0;
/// Side of the square structuring element applied to the Canny edges.
pub const EDGE_DILATION_KERNEL: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum EdgeError {
    #[error("sigma must be finite and non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("dilation kernel must be odd and at least 1, got {0}")]
    EvenKernel(usize),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(&'static str),
    #[error("buffer holds {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
}

/// The alpha edge band: Canny edges of the alpha map at threshold 20,
/// dilated by a 5x5 square.
pub fn alpha_edge_mask(alpha: &Plane) -> EdgeMask {
    let edges = canny(alpha, EDGE_CANNY_THRESHOLD);
    let mask = dilate(&edges.mask, EDGE_DILATION_KERNEL).expect("kernel is odd");
    EdgeMask { mask, threshold: EDGE_CANNY_THRESHOLD }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(size: usize, r: f64) -> Plane {
        let c = size as f64 / 2.0;
        Plane::from_fn(size, size, |x, y| {
            let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
            (r + 0.5 - d).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn constant_alpha_has_no_band() {
        assert!(alpha_edge_mask(&Plane::new(32, 32, 0.7)).mask.none());
    }

    #[test]
    fn hard_split_gives_five_pixel_band() {
        let a = Plane::from_fn(40, 24, |x, _| if x < 20 { 0.0 } else { 1.0 });
        let band = alpha_edge_mask(&a).mask;
        for y in 0..24 {
            let cols: Vec<usize> = (0..40).filter(|&x| band.get(x, y)).collect();
            assert_eq!(cols.len(), 5, "row {y}: {cols:?}");
            assert_eq!(cols[4] - cols[0], 4);
            assert!(cols.contains(&19) || cols.contains(&20));
        }
    }

    #[test]
    fn disk_gives_annulus() {
        let band = alpha_edge_mask(&disk(128, 20.0)).mask;
        let c = 64.0;
        for y in 0..128 {
            for x in 0..128 {
                let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
                if band.get(x, y) {
                    assert!((d - 20.0).abs() < 5.0, "band pixel at distance {d}");
                }
                if (d - 20.0).abs() < 1.5 {
                    assert!(band.get(x, y), "ring pixel at distance {d} missing");
                }
            }
        }
        // An annulus of width ~5 around a circle of radius 20.
        let area = band.count() as f64;
        let expected = 2.0 * std::f64::consts::PI * 20.0 * 5.0;
        assert!((area / expected - 1.0).abs() < 0.3, "area {area} vs {expected}");
    }

    #[test]
    fn band_is_symmetric_under_alpha_inversion() {
        let a = disk(64, 13.0);
        let inv = a.map(|v| 1.0 - v);
        assert_eq!(alpha_edge_mask(&a), alpha_edge_mask(&inv));
    }
}
