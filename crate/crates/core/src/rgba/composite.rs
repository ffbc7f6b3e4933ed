use super::{Background, ImageError, InpaintMask, RgbImage, RgbaImage};

/// The over operator: `alpha * F + (1 - alpha) * B` per pixel and channel.
pub fn composite_over(img: &RgbaImage, bg: Background) -> RgbImage {
    let n = img.len();
    let color = bg.color();
    let mut data = vec![0.0; 3 * n];
    for (c, &b) in color.iter().enumerate() {
        let src = img.channel(c);
        let dst = &mut data[c * n..(c + 1) * n];
        for i in 0..n {
            let a = img.alpha()[i];
            let f = src[i];
            // Rounding must not leave the [F, B] segment.
            dst[i] = (a * f + (1.0 - a) * b).clamp(f.min(b), f.max(b));
        }
    }
    RgbImage { width: img.width(), height: img.height(), data }
}

/// Keeps `result` inside the mask and restores `original` (rgb and alpha)
/// everywhere else.
pub fn blend_with_original(
    result: &RgbaImage,
    original: &RgbaImage,
    mask: &InpaintMask,
) -> Result<RgbaImage, ImageError> {
    if result.dims() != original.dims() {
        return Err(ImageError::DimensionMismatch { expected: original.dims(), got: result.dims() });
    }
    mask.check_dims(original.width(), original.height())?;
    let n = original.len();
    let mut rgb = original.rgb().to_vec();
    let mut alpha = original.alpha().to_vec();
    for i in 0..n {
        if mask.is_masked(i) {
            for c in 0..3 {
                rgb[c * n + i] = result.rgb()[c * n + i];
            }
            alpha[i] = result.alpha()[i];
        }
    }
    RgbaImage::new(original.width(), original.height(), rgb, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, f: impl Fn(usize) -> [f64; 4]) -> RgbaImage {
        let n = w * h;
        let mut rgb = vec![0.0; 3 * n];
        let mut alpha = vec![0.0; n];
        for i in 0..n {
            let p = f(i);
            for c in 0..3 {
                rgb[c * n + i] = p[c];
            }
            alpha[i] = p[3];
        }
        RgbaImage::new(w, h, rgb, alpha).unwrap()
    }

    #[test]
    fn opaque_is_identity_and_transparent_is_background() {
        let a = img(3, 2, |i| [i as f64 / 6.0, 0.5, 1.0 - i as f64 / 6.0, 1.0]);
        assert_eq!(composite_over(&a, Background::BLACK).data, a.rgb());
        let t = img(3, 2, |i| [i as f64 / 6.0, 0.5, 0.2, 0.0]);
        let out = composite_over(&t, Background::new([0.1, 0.2, 0.3]).unwrap());
        for c in 0..3 {
            assert!(out.channel(c).iter().all(|&v| v == [0.1, 0.2, 0.3][c]));
        }
    }

    #[test]
    fn half_alpha_interpolates() {
        let a = img(1, 1, |_| [0.8, 0.8, 0.8, 0.5]);
        let out = composite_over(&a, Background::new([0.4; 3]).unwrap());
        assert!((out.data[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn blend_checkerboard_interleaves_exactly() {
        let a = img(4, 4, |_| [0.9, 0.1, 0.3, 1.0]);
        let b = img(4, 4, |_| [0.2, 0.6, 0.7, 0.4]);
        let mask = InpaintMask::from_bools(4, 4, (0..16).map(|i| (i % 4 + i / 4) % 2 == 0).collect()).unwrap();
        let out = blend_with_original(&a, &b, &mask).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if (x + y) % 2 == 0 { a.pixel(x, y) } else { b.pixel(x, y) };
                assert_eq!(out.pixel(x, y), expect);
            }
        }
    }

    #[test]
    fn blend_single_pixel_and_mismatch() {
        let a = img(3, 3, |i| [i as f64 / 9.0, 0.0, 0.0, 1.0]);
        let b = img(3, 3, |_| [0.5, 0.5, 0.5, 0.5]);
        let mut m = vec![false; 9];
        m[4] = true;
        let mask = InpaintMask::from_bools(3, 3, m).unwrap();
        let out = blend_with_original(&b, &a, &mask).unwrap();
        let diff = (0..9).filter(|&i| out.pixel(i % 3, i / 3) != a.pixel(i % 3, i / 3)).count();
        assert!(diff <= 1);
        let small = img(2, 2, |_| [0.0, 0.0, 0.0, 1.0]);
        assert!(blend_with_original(&small, &a, &mask).is_err());
    }

    fn arb_pixel() -> impl Strategy<Value = [f64; 4]> {
        [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64]
    }

    proptest! {
        #[test]
        fn composite_is_convex(p in arb_pixel(), bg in [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64]) {
            let a = img(1, 1, |_| p);
            let out = composite_over(&a, Background::new(bg).unwrap());
            for c in 0..3 {
                prop_assert!(out.data[c] >= p[c].min(bg[c]) && out.data[c] <= p[c].max(bg[c]));
            }
        }

        #[test]
        fn blend_with_self_is_identity(px in prop::collection::vec(arb_pixel(), 12), bits in prop::collection::vec(any::<bool>(), 12)) {
            let a = img(4, 3, |i| px[i]);
            let mut bits = bits;
            bits[0] = true;
            bits[1] = false;
            let mask = InpaintMask::from_bools(4, 3, bits).unwrap();
            prop_assert_eq!(blend_with_original(&a, &a, &mask).unwrap(), a);
        }
    }
}
