use serde::{Deserialize, Serialize};

use super::telea::{telea_inpaint, FillState, TELEA_RADIUS};
use super::{ImageError, RgbaImage};
use crate::edge::{dilate, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingVariant {
    /// Onion-peel extension of edge colors followed by one 3x3 box pass.
    ContentExtension,
    /// Fast-marching inpainting over the whole low-alpha region.
    Telea,
    /// Fast marching inside a band around the alpha support, grey elsewhere.
    TeleaLocalized,
    /// Constant mid grey.
    GreyBackground,
}

impl std::str::FromStr for PaddingVariant {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "content-extension" => Ok(Self::ContentExtension),
            "telea" => Ok(Self::Telea),
            "telea-localized" => Ok(Self::TeleaLocalized),
            "grey" | "grey-background" | "gray" => Ok(Self::GreyBackground),
            _ => Err(ImageError::Parse(format!("unknown padding strategy {s:?}"))),
        }
    }
}

/// How RGB values are chosen under (near-)transparent pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaddingStrategy {
    pub variant: PaddingVariant,
    /// Pixels with alpha strictly below this are padded.
    pub alpha_threshold: f64,
    /// Band half-width, in pixels, for `TeleaLocalized`.
    pub expansion: usize,
}

impl Default for PaddingStrategy {
    fn default() -> Self {
        Self { variant: PaddingVariant::ContentExtension, alpha_threshold: 20.0 / 255.0, expansion: 30 }
    }
}

impl PaddingStrategy {
    pub fn new(variant: PaddingVariant) -> Self {
        Self { variant, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if !(0.0..=1.0).contains(&self.alpha_threshold) {
            return Err(ImageError::InvalidPadding("alpha threshold must be in [0, 1]"));
        }
        Ok(())
    }
}

const GREY: [f64; 3] = [0.5; 3];

/// Replaces RGB where alpha is below the threshold. Alpha, and RGB at or
/// above the threshold, are never modified.
pub fn rgb_pad(img: &RgbaImage, strategy: &PaddingStrategy) -> Result<RgbaImage, ImageError> {
    strategy.validate()?;
    let region: Vec<bool> = img.alpha().iter().map(|&a| a < strategy.alpha_threshold).collect();
    if !region.iter().any(|&b| b) {
        return Ok(img.clone());
    }
    match strategy.variant {
        PaddingVariant::GreyBackground => {
            let mut out = img.clone();
            for (i, _) in region.iter().enumerate().filter(|(_, &r)| r) {
                out.set_rgb_at(i, GREY);
            }
            Ok(out)
        }
        PaddingVariant::ContentExtension => Ok(content_extension(img, &region)),
        PaddingVariant::Telea => {
            let state: Vec<FillState> =
                region.iter().map(|&r| if r { FillState::Fill } else { FillState::Known }).collect();
            run_telea(img, &state)
        }
        PaddingVariant::TeleaLocalized => {
            let (w, h) = img.dims();
            let support = BinaryMask::from_vec(w, h, region.iter().map(|r| !r).collect()).expect("dims");
            if support.none() {
                return Err(ImageError::NoSourcePixels);
            }
            let band = dilate(&support, 2 * strategy.expansion + 1).expect("odd kernel");
            let state: Vec<FillState> = (0..w * h)
                .map(|i| match (region[i], band.data()[i]) {
                    (false, _) => FillState::Known,
                    (true, true) => FillState::Fill,
                    (true, false) => FillState::Excluded,
                })
                .collect();
            let mut out = run_telea(img, &state)?;
            for (i, s) in state.iter().enumerate() {
                if *s == FillState::Excluded {
                    out.set_rgb_at(i, GREY);
                }
            }
            Ok(out)
        }
    }
}

fn run_telea(img: &RgbaImage, state: &[FillState]) -> Result<RgbaImage, ImageError> {
    let n = img.len();
    let mut channels: Vec<Vec<f64>> = (0..3).map(|c| img.channel(c).to_vec()).collect();
    telea_inpaint(&mut channels, img.width(), img.height(), state, TELEA_RADIUS)?;
    let mut rgb = Vec::with_capacity(3 * n);
    for ch in channels {
        rgb.extend(ch);
    }
    img.clone().with_rgb(rgb)
}

fn content_extension(img: &RgbaImage, region: &[bool]) -> RgbaImage {
    let (w, h) = img.dims();
    let n = w * h;
    let mut out = img.clone();
    let mut filled: Vec<bool> = region.iter().map(|r| !r).collect();
    if !filled.iter().any(|&f| f) {
        for (i, _) in region.iter().enumerate().filter(|(_, &r)| r) {
            out.set_rgb_at(i, GREY);
        }
        return out;
    }
    // Each ring takes the mean of its already-filled 8-neighbors, all
    // computed from the state at the start of the ring.
    loop {
        let mut updates = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if filled[i] {
                    continue;
                }
                let mut sum = [0.0; 3];
                let mut count = 0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if filled[j] {
                            let c = out.rgb_at(j);
                            for k in 0..3 {
                                sum[k] += c[k];
                            }
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    updates.push((i, sum.map(|s| s / count as f64)));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (i, c) in updates {
            out.set_rgb_at(i, c);
            filled[i] = true;
        }
    }
    // One box pass over the padded pixels, reading the unblurred fill.
    let snapshot = out.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !region[i] {
                continue;
            }
            let mut sum = [0.0; 3];
            let mut count = 0;
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let c = snapshot.rgb_at(ny * w + nx);
                    for k in 0..3 {
                        sum[k] += c[k];
                    }
                    count += 1;
                }
            }
            out.set_rgb_at(i, sum.map(|s| s / count as f64));
        }
    }
    debug_assert_eq!(out.len(), n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_hole(w: usize, h: usize, holes: &[usize], color: [f64; 3]) -> RgbaImage {
        let mut img = RgbaImage::filled(w, h, color, 1.0).unwrap();
        for &i in holes {
            img.set_pixel(i % w, i / w, [0.9, 0.1, 0.8, 0.0]);
        }
        img
    }

    const ALL: [PaddingVariant; 4] = [
        PaddingVariant::ContentExtension,
        PaddingVariant::Telea,
        PaddingVariant::TeleaLocalized,
        PaddingVariant::GreyBackground,
    ];

    #[test]
    fn opaque_image_unchanged() {
        let img = RgbaImage::filled(6, 5, [0.2, 0.4, 0.6], 1.0).unwrap();
        for v in ALL {
            assert_eq!(rgb_pad(&img, &PaddingStrategy::new(v)).unwrap(), img);
        }
    }

    #[test]
    fn grey_fills_transparent_pixel() {
        let img = with_hole(4, 4, &[5], [0.1, 0.2, 0.3]);
        let out = rgb_pad(&img, &PaddingStrategy::new(PaddingVariant::GreyBackground)).unwrap();
        assert_eq!(out.pixel(1, 1), [0.5, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn telea_center_pixel_on_uniform_field() {
        let img = with_hole(5, 5, &[12], [0.3, 0.3, 0.3]);
        let out = rgb_pad(&img, &PaddingStrategy::new(PaddingVariant::Telea)).unwrap();
        for c in 0..3 {
            assert!((out.pixel(2, 2)[c] - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn telea_variants_need_sources() {
        let img = RgbaImage::filled(4, 4, [0.0; 3], 0.0).unwrap();
        for v in [PaddingVariant::Telea, PaddingVariant::TeleaLocalized] {
            let err = rgb_pad(&img, &PaddingStrategy::new(v)).unwrap_err();
            assert_eq!(err.to_string(), "no source pixels to propagate");
        }
        let grey = rgb_pad(&img, &PaddingStrategy::new(PaddingVariant::ContentExtension)).unwrap();
        assert!(grey.rgb().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn content_extension_spreads_edge_color() {
        // Left half opaque red, right half transparent junk.
        let mut img = RgbaImage::filled(10, 4, [1.0, 0.0, 0.0], 1.0).unwrap();
        for y in 0..4 {
            for x in 5..10 {
                img.set_pixel(x, y, [0.0, 0.0, 1.0, 0.0]);
            }
        }
        let out = rgb_pad(&img, &PaddingStrategy::default()).unwrap();
        for y in 0..4 {
            for x in 5..10 {
                let p = out.pixel(x, y);
                assert!((p[0] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn localized_greys_outside_band() {
        let mut img = RgbaImage::filled(40, 8, [0.0, 0.0, 0.0], 0.0).unwrap();
        for y in 0..8 {
            for x in 0..4 {
                img.set_pixel(x, y, [0.2, 0.7, 0.1, 1.0]);
            }
        }
        let strat = PaddingStrategy { variant: PaddingVariant::TeleaLocalized, expansion: 10, ..Default::default() };
        let out = rgb_pad(&img, &strat).unwrap();
        assert!((out.pixel(10, 3)[1] - 0.7).abs() < 1e-9);
        assert_eq!(out.pixel(30, 3)[..3], [0.5, 0.5, 0.5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn padding_only_touches_low_alpha_rgb(
            seed in prop::collection::vec(0.0..=1.0f64, 4 * 64),
            v in prop::sample::select(ALL.to_vec()),
        ) {
            let n = 64;
            let rgb = seed[..3 * n].to_vec();
            let alpha: Vec<f64> = seed[3 * n..].iter().map(|a| if *a < 0.4 { 0.0 } else { *a }).collect();
            let img = RgbaImage::new(8, 8, rgb, alpha).unwrap();
            let strat = PaddingStrategy::new(v);
            match rgb_pad(&img, &strat) {
                Ok(out) => {
                    prop_assert_eq!(out.alpha(), img.alpha());
                    for i in 0..n {
                        if img.alpha()[i] >= strat.alpha_threshold {
                            prop_assert_eq!(out.rgb_at(i), img.rgb_at(i));
                        }
                    }
                }
                Err(ImageError::NoSourcePixels) => prop_assert!(img.alpha().iter().all(|&a| a < strat.alpha_threshold)),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
