use crate::edge::{alpha_edge_mask, BinaryMask};
use crate::nn::Tensor;
use crate::rgba::{composite_over, Background, RgbaImage};

pub const AEQ_INPUT_CHANNELS: usize = 8;

/// Channel values the classifier sees at a fully transparent pixel, used to
/// pad inputs up to a multiple of the network stride.
pub const TRANSPARENT_PIXEL: [f64; AEQ_INPUT_CHANNELS] = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// Classifier input for one image plus the edge band it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct AeqInput {
    /// `(8, H, W)`: white composite RGB, black composite RGB, alpha, edge mask.
    pub tensor: Tensor,
    pub edge_mask: BinaryMask,
}

impl AeqInput {
    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width() * self.height();
        &self.tensor.data()[c * n..(c + 1) * n]
    }
}

pub fn build_input(img: &RgbaImage) -> AeqInput {
    let (w, h) = img.dims();
    let n = w * h;
    let white = composite_over(img, Background::WHITE);
    let black = composite_over(img, Background::BLACK);
    let edge_mask = alpha_edge_mask(&img.alpha_plane()).mask;
    let mut data = Vec::with_capacity(AEQ_INPUT_CHANNELS * n);
    data.extend_from_slice(&white.data);
    data.extend_from_slice(&black.data);
    data.extend_from_slice(img.alpha());
    data.extend(edge_mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let tensor = Tensor::new(&[AEQ_INPUT_CHANNELS, h, w], data).expect("channel count matches");
    AeqInput { tensor, edge_mask }
}

/// Pads a `(8, h, w)` input to `(8, ph, pw)` with transparent pixels at the
/// bottom and right.
pub(crate) fn pad_input(t: &Tensor, ph: usize, pw: usize) -> Tensor {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    if (h, w) == (ph, pw) {
        return t.clone();
    }
    let src = t.data();
    let mut out = Vec::with_capacity(AEQ_INPUT_CHANNELS * ph * pw);
    for (c, &fill) in TRANSPARENT_PIXEL.iter().enumerate() {
        for y in 0..ph {
            for x in 0..pw {
                out.push(if y < h && x < w { src[(c * h + y) * w + x] } else { fill });
            }
        }
    }
    Tensor::new(&[AEQ_INPUT_CHANNELS, ph, pw], out).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::Plane;

    #[test]
    fn opaque_image_has_identical_composites_and_no_edges() {
        let img = RgbaImage::filled(12, 10, [0.2, 0.4, 0.9], 1.0).unwrap();
        let inp = build_input(&img);
        assert_eq!(inp.tensor.shape(), &[8, 10, 12]);
        for c in 0..3 {
            assert_eq!(inp.channel(c), img.channel(c));
            assert_eq!(inp.channel(c + 3), img.channel(c));
        }
        assert!(inp.channel(7).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transparent_image_is_white_then_black() {
        let img = RgbaImage::filled(8, 8, [0.3, 0.6, 0.1], 0.0).unwrap();
        let inp = build_input(&img);
        for c in 0..3 {
            assert!(inp.channel(c).iter().all(|&v| v == 1.0));
            assert!(inp.channel(c + 3).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn disk_alpha_and_band_channels() {
        let n = 32;
        let alpha = Plane::from_fn(n, n, |x, y| {
            let d = ((x as f64 - 15.5).powi(2) + (y as f64 - 15.5).powi(2)).sqrt();
            (9.5 - d).clamp(0.0, 1.0)
        });
        let img = RgbaImage::new(n, n, vec![0.5; 3 * n * n], alpha.data().to_vec()).unwrap();
        let inp = build_input(&img);
        assert_eq!(inp.channel(6), alpha.data());
        let band = alpha_edge_mask(&alpha).mask;
        let ch: Vec<bool> = inp.channel(7).iter().map(|&v| v == 1.0).collect();
        assert_eq!(ch, band.data());
        // annulus: the centre and the corners stay outside the band
        assert!(!band.get(16, 16) && !band.get(0, 0) && band.count() > 0);
    }

    #[test]
    fn padding_uses_transparent_values() {
        let img = RgbaImage::filled(3, 2, [0.2, 0.2, 0.2], 1.0).unwrap();
        let t = pad_input(&build_input(&img).tensor, 4, 8);
        assert_eq!(t.shape(), &[8, 4, 8]);
        assert_eq!(t.data()[0], 0.2);
        for (c, v) in TRANSPARENT_PIXEL.iter().enumerate() {
            assert_eq!(t.data()[c * 32 + 31], *v);
        }
    }
}
