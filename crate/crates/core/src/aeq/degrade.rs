//! Synthetic alpha degradations and their low-quality labels.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AeqError;
use crate::edge::{alpha_edge_mask, dilate, dilate_plane, fractal_noise, gaussian_blur, BinaryMask, NoiseSpec, Plane};
use crate::rgba::{composite_over, Background, RgbaImage};
use crate::rng::{mix, substream};

/// `|alpha_clean - alpha_degraded|` above this marks a pixel low quality.
pub const LABEL_THRESHOLD: f64 = 0.1;
/// Extra dilation applied to the clean edge band before restricting labels.
pub const LABEL_BAND_KERNEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradeMode {
    /// Dilate and/or blur alpha, applied where the noise gate exceeds 0.5.
    DilateBlur,
    /// Paint low-alpha rgb a solid colour, then dilate alpha.
    SolidFillDilate,
    /// Hard matte re-extracted from a composite by colour distance.
    SegmentationProxy,
}

impl FromStr for DegradeMode {
    type Err = AeqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "dilate-blur" => Ok(Self::DilateBlur),
            "solid-fill-dilate" | "solid-fill" => Ok(Self::SolidFillDilate),
            "segmentation-proxy" | "segmentation" => Ok(Self::SegmentationProxy),
            _ => Err(AeqError::Config(format!("unknown degradation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    pub mode: DegradeMode,
    /// Side of the square structuring element; 0 disables dilation and even
    /// sizes are rounded up to the next odd size.
    pub dilation: usize,
    pub blur_sigma: f64,
    pub fill_color: [f64; 3],
    pub noise: NoiseSpec,
    pub low_alpha_threshold: f64,
    /// Colour distance (max over channels) from the background above which
    /// the segmentation proxy calls a pixel foreground.
    pub matte_threshold: f64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            mode: DegradeMode::DilateBlur,
            dilation: 0,
            blur_sigma: 0.0,
            fill_color: [0.5; 3],
            noise: NoiseSpec::default(),
            low_alpha_threshold: 50.0 / 255.0,
            matte_threshold: 0.15,
        }
    }
}

impl DegradationSpec {
    pub fn new(mode: DegradeMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AeqError> {
        if !self.blur_sigma.is_finite() || self.blur_sigma < 0.0 {
            return Err(AeqError::Config(format!("blur sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if self.fill_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(AeqError::Config("fill colour components must be in [0, 1]".into()));
        }
        for (name, t) in [("low-alpha", self.low_alpha_threshold), ("matte", self.matte_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(AeqError::Config(format!("{name} threshold must be in [0, 1], got {t}")));
            }
        }
        self.noise.validate()?;
        Ok(())
    }

    /// Odd structuring element size actually used.
    pub fn kernel(&self) -> usize {
        if self.dilation == 0 {
            1
        } else {
            self.dilation | 1
        }
    }

    /// How far (in pixels) alpha can spread from its support.
    pub fn radius(&self) -> usize {
        let blur = if self.mode == DegradeMode::DilateBlur { (3.0 * self.blur_sigma).ceil() as usize } else { 0 };
        self.kernel() / 2 + blur
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub image: RgbaImage,
    /// `true` marks low-quality pixels.
    pub label: BinaryMask,
}

/// Degrades `img` per `spec`. `seed` drives the noise gate and the proxy's
/// background colour, so equal inputs give equal outputs.
pub fn degrade(img: &RgbaImage, spec: &DegradationSpec, seed: u64) -> Result<Degraded, AeqError> {
    spec.validate()?;
    let (w, h) = img.dims();
    let alpha = img.alpha_plane();
    let image = match spec.mode {
        DegradeMode::DilateBlur => {
            let expanded = gaussian_blur(&dilate_plane(&alpha, spec.kernel())?, spec.blur_sigma)?;
            let noise = NoiseSpec { seed: mix(spec.noise.seed, seed), ..spec.noise };
            let gate = fractal_noise(w, h, &noise)?;
            let a: Vec<f64> = (0..w * h)
                .map(|i| if gate.data()[i] > 0.5 { expanded.data()[i].clamp(0.0, 1.0) } else { alpha.data()[i] })
                .collect();
            img.clone().with_alpha(a)?
        }
        DegradeMode::SolidFillDilate => {
            let n = w * h;
            let mut rgb = img.rgb().to_vec();
            for i in 0..n {
                if img.alpha()[i] < spec.low_alpha_threshold {
                    for c in 0..3 {
                        rgb[c * n + i] = spec.fill_color[c];
                    }
                }
            }
            let a = dilate_plane(&alpha, spec.kernel())?.into_vec();
            img.clone().with_rgb(rgb)?.with_alpha(a)?
        }
        DegradeMode::SegmentationProxy => {
            let mut rng = substream(seed, "degrade-background");
            let bg = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let comp = composite_over(img, Background::new(bg)?);
            let n = w * h;
            let mut rgb = img.rgb().to_vec();
            let mut a = vec![0.0; n];
            for i in 0..n {
                let dist = (0..3).map(|c| (comp.data[c * n + i] - bg[c]).abs()).fold(0.0, f64::max);
                if dist > spec.matte_threshold {
                    a[i] = 1.0;
                    for c in 0..3 {
                        rgb[c * n + i] = comp.data[c * n + i];
                    }
                }
            }
            img.clone().with_rgb(rgb)?.with_alpha(a)?
        }
    };
    let label = label_map(&alpha, &image.alpha_plane())?;
    Ok(Degraded { image, label })
}

/// Pixels whose alpha moved by more than [`LABEL_THRESHOLD`], restricted to
/// the clean edge band grown by [`LABEL_BAND_KERNEL`].
pub fn label_map(clean: &Plane, degraded: &Plane) -> Result<BinaryMask, AeqError> {
    let band = dilate(&alpha_edge_mask(clean).mask, LABEL_BAND_KERNEL)?;
    let (w, h) = (clean.width(), clean.height());
    let diff = BinaryMask::from_vec(
        w,
        h,
        clean.data().iter().zip(degraded.data()).map(|(a, b)| (a - b).abs() > LABEL_THRESHOLD).collect(),
    )?;
    Ok(diff.and(&band)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blob(n: usize, r: f64, color: [f64; 3]) -> RgbaImage {
        let c = n as f64 / 2.0 - 0.5;
        let alpha = Plane::from_fn(n, n, |x, y| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            (r + 0.5 - d).clamp(0.0, 1.0)
        });
        let rgb: Vec<f64> = color.iter().flat_map(|&v| std::iter::repeat_n(v, n * n)).collect();
        RgbaImage::new(n, n, rgb, alpha.into_vec()).unwrap()
    }

    #[test]
    fn zero_dilation_and_blur_is_identity() {
        let img = blob(24, 7.0, [0.9, 0.1, 0.2]);
        let d = degrade(&img, &DegradationSpec::new(DegradeMode::DilateBlur), 3).unwrap();
        assert_eq!(d.image, img);
        assert!(d.label.none());
    }

    #[test]
    fn solid_fill_grows_single_pixel_to_square() {
        let mut img = RgbaImage::filled(15, 15, [0.2, 0.3, 0.4], 0.0).unwrap();
        img.set_pixel(7, 7, [0.9, 0.9, 0.9, 1.0]);
        let spec = DegradationSpec { dilation: 5, fill_color: [1.0, 0.0, 0.0], ..DegradationSpec::new(DegradeMode::SolidFillDilate) };
        let d = degrade(&img, &spec, 0).unwrap();
        let support = BinaryMask::from_fn(15, 15, |x, y| d.image.alpha()[y * 15 + x] > 0.0);
        let square = BinaryMask::from_fn(15, 15, |x, y| (5..=9).contains(&x) && (5..=9).contains(&y));
        assert_eq!(support, square);
        let ring = BinaryMask::from_fn(15, 15, |x, y| square.get(x, y) && (x, y) != (7, 7));
        assert_eq!(d.label, ring);
        assert_eq!(d.image.pixel(6, 7), [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.image.pixel(7, 7), [0.9, 0.9, 0.9, 1.0]);
    }

    #[test]
    fn same_seed_same_output() {
        let img = blob(32, 9.0, [0.3, 0.7, 0.5]);
        for mode in [DegradeMode::DilateBlur, DegradeMode::SolidFillDilate, DegradeMode::SegmentationProxy] {
            let spec = DegradationSpec { dilation: 5, blur_sigma: 1.5, ..DegradationSpec::new(mode) };
            assert_eq!(degrade(&img, &spec, 11).unwrap(), degrade(&img, &spec, 11).unwrap());
        }
    }

    #[test]
    fn segmentation_proxy_is_a_hard_matte() {
        let img = blob(32, 9.0, [0.3, 0.7, 0.5]);
        let d = degrade(&img, &DegradationSpec::new(DegradeMode::SegmentationProxy), 5).unwrap();
        assert!(d.image.alpha().iter().all(|&a| a == 0.0 || a == 1.0));
    }

    #[test]
    fn even_dilation_rounds_up() {
        let spec = DegradationSpec { dilation: 4, ..DegradationSpec::default() };
        assert_eq!(spec.kernel(), 5);
        assert_eq!(DegradationSpec::default().kernel(), 1);
    }

    #[test]
    fn rejects_negative_sigma() {
        let spec = DegradationSpec { blur_sigma: -1.0, ..DegradationSpec::default() };
        assert!(degrade(&blob(8, 2.0, [0.0; 3]), &spec, 0).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = DegradationSpec> {
        (0usize..3, 0usize..8, 0.0f64..2.5, any::<u64>(), 0.0f64..1.0).prop_map(|(m, d, s, seed, f)| {
            let mode = [DegradeMode::DilateBlur, DegradeMode::SolidFillDilate, DegradeMode::SegmentationProxy][m];
            DegradationSpec {
                mode,
                dilation: d,
                blur_sigma: s,
                fill_color: [f, 1.0 - f, 0.5],
                noise: NoiseSpec { seed, base_scale: 8.0, ..NoiseSpec::default() },
                ..DegradationSpec::default()
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Compared premultiplied: rgb under zero alpha is invisible.
        #[test]
        fn never_alters_far_from_supports(spec in arb_spec(), r in 2.0f64..6.0, seed in any::<u64>()) {
            let img = blob(24, r, [0.8, 0.2, 0.6]);
            let d = degrade(&img, &spec, seed).unwrap();
            let supp = |im: &RgbaImage| BinaryMask::from_fn(24, 24, |x, y| im.alpha()[y * 24 + x] > 0.0);
            let union = supp(&img).or(&supp(&d.image)).unwrap();
            let near = dilate(&union, 2 * spec.radius() + 1).unwrap();
            for y in 0..24 {
                for x in 0..24 {
                    if near.get(x, y) {
                        continue;
                    }
                    let (a, b) = (img.pixel(x, y), d.image.pixel(x, y));
                    prop_assert_eq!(a[3], b[3]);
                    for c in 0..3 {
                        prop_assert_eq!(a[c] * a[3], b[c] * b[3]);
                    }
                }
            }
        }

        #[test]
        fn labels_live_in_the_band(spec in arb_spec(), seed in any::<u64>()) {
            let img = blob(24, 6.0, [0.1, 0.9, 0.4]);
            let d = degrade(&img, &spec, seed).unwrap();
            let band = dilate(&alpha_edge_mask(&img.alpha_plane()).mask, LABEL_BAND_KERNEL).unwrap();
            prop_assert!(d.label.is_subset_of(&band));
        }
    }
}
