use serde::{Deserialize, Serialize};

use super::ImageError;
use crate::edge::{BinaryMask, Plane};

/// Straight-alpha RGBA image with channel values in `[0, 1]`.
///
/// RGB is stored planar (`rgb[c * h * w + y * w + x]`), alpha separately.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbaImage {
    width: usize,
    height: usize,
    rgb: Vec<f64>,
    alpha: Vec<f64>,
}

fn check_unit(values: &[f64], what: &'static str) -> Result<(), ImageError> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(ImageError::OutOfRange { channel: what, value: *v });
    }
    Ok(())
}

impl RgbaImage {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>, alpha: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage);
        }
        let n = width * height;
        if rgb.len() != 3 * n || alpha.len() != n {
            return Err(ImageError::BufferSize { expected: 4 * n, got: rgb.len() + alpha.len() });
        }
        check_unit(&rgb, "rgb")?;
        check_unit(&alpha, "alpha")?;
        Ok(Self { width, height, rgb, alpha })
    }

    /// Uniform image of one color and opacity.
    pub fn filled(width: usize, height: usize, color: [f64; 3], alpha: f64) -> Result<Self, ImageError> {
        let n = width * height;
        let mut rgb = Vec::with_capacity(3 * n);
        for c in color {
            rgb.extend(std::iter::repeat_n(c, n));
        }
        Self::new(width, height, rgb, vec![alpha; n])
    }

    /// Builds from interleaved RGBA bytes.
    pub fn from_rgba8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        let n = width * height;
        if bytes.len() != 4 * n {
            return Err(ImageError::BufferSize { expected: 4 * n, got: bytes.len() });
        }
        let mut rgb = vec![0.0; 3 * n];
        let mut alpha = vec![0.0; n];
        for i in 0..n {
            for c in 0..3 {
                rgb[c * n + i] = bytes[4 * i + c] as f64 / 255.0;
            }
            alpha[i] = bytes[4 * i + 3] as f64 / 255.0;
        }
        Self::new(width, height, rgb, alpha)
    }

    /// Interleaved RGBA bytes, rounding to the nearest 8-bit level.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let n = self.len();
        let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let mut out = Vec::with_capacity(4 * n);
        for i in 0..n {
            out.push(q(self.rgb[i]));
            out.push(q(self.rgb[n + i]));
            out.push(q(self.rgb[2 * n + i]));
            out.push(q(self.alpha[i]));
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.len();
        &self.rgb[c * n..(c + 1) * n]
    }

    pub fn alpha_plane(&self) -> Plane {
        Plane::from_vec(self.width, self.height, self.alpha.clone()).expect("dims match")
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 4] {
        let n = self.len();
        let i = y * self.width + x;
        [self.rgb[i], self.rgb[n + i], self.rgb[2 * n + i], self.alpha[i]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, px: [f64; 4]) {
        let n = self.len();
        let i = y * self.width + x;
        for (c, v) in px.iter().take(3).enumerate() {
            self.rgb[c * n + i] = v.clamp(0.0, 1.0);
        }
        self.alpha[i] = px[3].clamp(0.0, 1.0);
    }

    pub fn rgb_at(&self, i: usize) -> [f64; 3] {
        let n = self.len();
        [self.rgb[i], self.rgb[n + i], self.rgb[2 * n + i]]
    }

    pub(crate) fn set_rgb_at(&mut self, i: usize, v: [f64; 3]) {
        let n = self.len();
        for (c, value) in v.into_iter().enumerate() {
            self.rgb[c * n + i] = value.clamp(0.0, 1.0);
        }
    }

    /// Replaces the alpha channel, clamping into `[0, 1]`.
    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Result<Self, ImageError> {
        if alpha.len() != self.len() {
            return Err(ImageError::BufferSize { expected: self.len(), got: alpha.len() });
        }
        self.alpha = alpha.into_iter().map(|a| a.clamp(0.0, 1.0)).collect();
        Ok(self)
    }

    /// Replaces the planar RGB buffer, clamping into `[0, 1]`.
    pub fn with_rgb(mut self, rgb: Vec<f64>) -> Result<Self, ImageError> {
        if rgb.len() != 3 * self.len() {
            return Err(ImageError::BufferSize { expected: 3 * self.len(), got: rgb.len() });
        }
        self.rgb = rgb.into_iter().map(|a| a.clamp(0.0, 1.0)).collect();
        Ok(self)
    }

    /// Rectangular sub-image; errors if the window leaves the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, ImageError> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(ImageError::DimensionMismatch {
                expected: (self.width, self.height),
                got: (x0 + w, y0 + h),
            });
        }
        let n = w * h;
        let mut rgb = vec![0.0; 3 * n];
        let mut alpha = vec![0.0; n];
        let sn = self.len();
        for y in 0..h {
            for x in 0..w {
                let si = (y0 + y) * self.width + x0 + x;
                let di = y * w + x;
                for c in 0..3 {
                    rgb[c * n + di] = self.rgb[c * sn + si];
                }
                alpha[di] = self.alpha[si];
            }
        }
        Self::new(w, h, rgb, alpha)
    }

    /// Places the image on a fully transparent canvas at `(x0, y0)`.
    pub fn pad_to(&self, width: usize, height: usize, x0: usize, y0: usize) -> Result<Self, ImageError> {
        if x0 + self.width > width || y0 + self.height > height {
            return Err(ImageError::DimensionMismatch { expected: (width, height), got: (x0 + self.width, y0 + self.height) });
        }
        let mut out = Self::filled(width, height, [0.0; 3], 0.0)?;
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(x0 + x, y0 + y, self.pixel(x, y));
            }
        }
        Ok(out)
    }
}

/// Solid compositing background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    color: [f64; 3],
}

impl Background {
    pub const WHITE: Background = Background { color: [1.0; 3] };
    pub const BLACK: Background = Background { color: [0.0; 3] };
    pub const GREY: Background = Background { color: [0.5; 3] };

    pub fn new(color: [f64; 3]) -> Result<Self, ImageError> {
        check_unit(&color, "background")?;
        Ok(Self { color })
    }

    pub fn color(&self) -> [f64; 3] {
        self.color
    }

    /// Parses `white`, `black`, `grey`/`gray`, or `r,g,b` with components in `[0, 1]`.
    pub fn parse(s: &str) -> Result<Self, ImageError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Ok(Self::WHITE),
            "black" => Ok(Self::BLACK),
            "grey" | "gray" => Ok(Self::GREY),
            other => {
                let parts: Vec<f64> = other
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| ImageError::Parse(format!("bad background color {s:?}")))?;
                match parts.as_slice() {
                    [r, g, b] => Self::new([*r, *g, *b]),
                    _ => Err(ImageError::Parse(format!("bad background color {s:?}"))),
                }
            }
        }
    }
}

/// Planar RGB image (no alpha), the output of compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Planar, `3 * width * height`.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect()
    }

    /// Opaque RGBA view, used to write composites as PNG.
    pub fn to_rgba(&self) -> RgbaImage {
        RgbaImage::new(self.width, self.height, self.data.clone(), vec![1.0; self.width * self.height])
            .expect("composite values are in range")
    }
}

/// Binary inpainting mask: `true` marks pixels to regenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintMask {
    mask: BinaryMask,
}

impl InpaintMask {
    /// Rejects masks with no masked pixel or no unmasked pixel.
    pub fn new(mask: BinaryMask) -> Result<Self, ImageError> {
        let masked = mask.count();
        if masked == 0 {
            return Err(ImageError::DegenerateMask("no masked pixels"));
        }
        if masked == mask.len() {
            return Err(ImageError::DegenerateMask("no unmasked pixels"));
        }
        Ok(Self { mask })
    }

    pub fn from_bools(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        let mask = BinaryMask::from_vec(width, height, data).map_err(|_| ImageError::BufferSize {
            expected: width * height,
            got: 0,
        })?;
        Self::new(mask)
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mask.width(), self.mask.height())
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.data()[i]
    }

    pub fn coverage(&self) -> f64 {
        self.mask.count() as f64 / self.mask.len() as f64
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<(), ImageError> {
        if self.dims() != (width, height) {
            return Err(ImageError::DimensionMismatch { expected: (width, height), got: self.dims() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        let err = RgbaImage::new(1, 1, vec![0.0, 1.5, 0.0], vec![1.0]).unwrap_err();
        assert!(matches!(err, ImageError::OutOfRange { channel: "rgb", .. }));
        assert!(RgbaImage::new(1, 1, vec![0.0; 3], vec![f64::NAN]).is_err());
        assert!(RgbaImage::new(2, 1, vec![0.0; 3], vec![1.0]).is_err());
    }

    #[test]
    fn rgba8_round_trip() {
        let bytes: Vec<u8> = (0..64u8).map(|b| b.wrapping_mul(37)).collect();
        let img = RgbaImage::from_rgba8(4, 4, &bytes).unwrap();
        assert_eq!(img.to_rgba8(), bytes);
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        assert!(InpaintMask::from_bools(2, 2, vec![false; 4]).is_err());
        assert!(InpaintMask::from_bools(2, 2, vec![true; 4]).is_err());
        let m = InpaintMask::from_bools(2, 2, vec![true, false, false, false]).unwrap();
        assert_eq!(m.coverage(), 0.25);
    }

    #[test]
    fn background_parsing() {
        assert_eq!(Background::parse("White").unwrap(), Background::WHITE);
        assert_eq!(Background::parse("0.2, 0.4,1").unwrap().color(), [0.2, 0.4, 1.0]);
        assert!(Background::parse("1,2,3").is_err());
        assert!(Background::parse("blue").is_err());
    }
}
