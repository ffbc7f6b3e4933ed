//! Procedural inpainting masks: brush strokes, boxes, Bezier blobs and
//! object masks taken from the alpha channel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::edge::{dilate, BinaryMask};
use crate::rgba::{InpaintMask, RgbaImage};
use crate::rng::{indexed_substream, uniform, StreamRng};

/// Random masks are redrawn until their coverage falls inside this open
/// interval.
pub const COVERAGE_RANGE: (f64, f64) = (0.02, 0.9);
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Stroke,
    Rectangle,
    Bezier,
    ObjectFromAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub seed: u64,
    /// Fixed `(x0, y0, x1, y1)` box for `Rectangle`, half-open.
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub rect: Option<[usize; 4]>,
    /// Polyline vertex count for `Stroke`.
    pub stroke_points: usize,
    /// Brush radius as a fraction of the shorter image side.
    pub brush: f64,
    /// Structuring element applied to object masks so they cover the soft edge.
    pub object_dilation: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { kind: MaskKind::Rectangle, seed: 0, rect: None, stroke_points: 4, brush: 0.06, object_dilation: 5 }
    }
}

impl MaskSpec {
    pub fn new(kind: MaskKind, seed: u64) -> Self {
        Self { kind, seed, ..Self::default() }
    }
}

fn in_range(m: &BinaryMask) -> bool {
    let c = m.count() as f64 / m.len() as f64;
    c > COVERAGE_RANGE.0 && c < COVERAGE_RANGE.1
}

fn rectangle(w: usize, h: usize, rng: &mut StreamRng) -> BinaryMask {
    let bw = rng.random_range((w / 6).max(1)..=(w * 3 / 4).max(1));
    let bh = rng.random_range((h / 6).max(1)..=(h * 3 / 4).max(1));
    let x0 = rng.random_range(0..=w - bw);
    let y0 = rng.random_range(0..=h - bh);
    BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 { ((wx * ex + wy * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (wx - ex * t).hypot(wy - ey * t)
}

fn stroke(w: usize, h: usize, spec: &MaskSpec, rng: &mut StreamRng) -> BinaryMask {
    let s = w.min(h) as f64;
    let r = (spec.brush * s * uniform(rng, 0.6, 1.4)).max(1.0);
    let mut pts = vec![[uniform(rng, 0.0, w as f64), uniform(rng, 0.0, h as f64)]];
    for _ in 1..spec.stroke_points.max(2) {
        let last = pts[pts.len() - 1];
        let a = uniform(rng, 0.0, std::f64::consts::TAU);
        let len = uniform(rng, 0.15, 0.45) * s;
        pts.push([(last[0] + len * a.cos()).clamp(0.0, w as f64), (last[1] + len * a.sin()).clamp(0.0, h as f64)]);
    }
    BinaryMask::from_fn(w, h, |x, y| {
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        pts.windows(2).any(|seg| segment_distance(p, seg[0], seg[1]) <= r)
    })
}

fn cubic(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let u = 1.0 - t;
    std::array::from_fn(|k| u * u * u * p0[k] + 3.0 * u * u * t * p1[k] + 3.0 * u * t * t * p2[k] + t * t * t * p3[k])
}

/// Closed curve of cubic segments through anchors around a centre, filled
/// with the even-odd rule.
fn bezier(w: usize, h: usize, rng: &mut StreamRng) -> BinaryMask {
    let s = w.min(h) as f64;
    let c = [uniform(rng, 0.3, 0.7) * w as f64, uniform(rng, 0.3, 0.7) * h as f64];
    let n = rng.random_range(3..=6);
    let a0 = uniform(rng, 0.0, std::f64::consts::TAU);
    let anchors: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = a0 + std::f64::consts::TAU * i as f64 / n as f64 + uniform(rng, -0.3, 0.3);
            let r = uniform(rng, 0.12, 0.4) * s;
            [c[0] + r * a.cos(), c[1] + r * a.sin()]
        })
        .collect();
    let mut poly = Vec::new();
    for i in 0..n {
        let (p0, p3) = (anchors[i], anchors[(i + 1) % n]);
        let jitter = |p: [f64; 2], rng: &mut StreamRng| {
            [p[0] + uniform(rng, -0.15, 0.15) * s, p[1] + uniform(rng, -0.15, 0.15) * s]
        };
        let p1 = jitter([p0[0] + (p3[0] - p0[0]) / 3.0, p0[1] + (p3[1] - p0[1]) / 3.0], rng);
        let p2 = jitter([p0[0] + 2.0 * (p3[0] - p0[0]) / 3.0, p0[1] + 2.0 * (p3[1] - p0[1]) / 3.0], rng);
        for k in 0..16 {
            poly.push(cubic(p0, p1, p2, p3, k as f64 / 16.0));
        }
    }
    BinaryMask::from_fn(w, h, |x, y| point_in_polygon([x as f64 + 0.5, y as f64 + 0.5], &poly))
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// 4-connected components of `mask`, each as a pixel list.
fn components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if !seen[j] && mask.data()[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        out.push(comp);
    }
    out
}

fn object(img: &RgbaImage, spec: &MaskSpec, rng: &mut StreamRng) -> Result<BinaryMask, BenchError> {
    let (w, h) = img.dims();
    let solid = BinaryMask::from_vec(w, h, img.alpha().iter().map(|&a| a > 0.5).collect()).expect("dims match");
    let comps = components(&solid);
    if comps.is_empty() {
        return Err(BenchError::Mask("object mask needs a pixel with alpha > 0.5".into()));
    }
    let grow = |comp: &[usize]| -> Result<BinaryMask, BenchError> {
        let mut m = BinaryMask::new(w, h);
        for &i in comp {
            m.data_mut()[i] = true;
        }
        if spec.object_dilation > 1 {
            m = dilate(&m, spec.object_dilation)?;
        }
        Ok(m)
    };
    let grown: Vec<BinaryMask> = comps.iter().map(|c| grow(c)).collect::<Result<_, _>>()?;
    let usable: Vec<&BinaryMask> = grown.iter().filter(|m| in_range(m)).collect();
    if usable.is_empty() {
        // every component is tiny or covers the frame; take the largest
        return Ok(grown.into_iter().max_by_key(|m| m.count()).expect("non-empty"));
    }
    Ok(usable[rng.random_range(0..usable.len())].clone())
}

/// Draws a mask for a `width x height` image. `image` is required for
/// [`MaskKind::ObjectFromAlpha`]. Random kinds are redrawn from the next
/// substream until the coverage lies in [`COVERAGE_RANGE`].
pub fn generate_mask(
    spec: &MaskSpec,
    width: usize,
    height: usize,
    image: Option<&RgbaImage>,
) -> Result<InpaintMask, BenchError> {
    if width == 0 || height == 0 {
        return Err(BenchError::Mask("mask dimensions must be positive".into()));
    }
    if !(spec.brush > 0.0 && spec.brush.is_finite()) {
        return Err(BenchError::Mask(format!("brush must be positive, got {}", spec.brush)));
    }
    let mask = match (spec.kind, spec.rect) {
        (MaskKind::Rectangle, Some([x0, y0, x1, y1])) => {
            if x0 >= x1 || y0 >= y1 || x1 > width || y1 > height {
                return Err(BenchError::Mask(format!("box {:?} does not fit {width}x{height}", [x0, y0, x1, y1])));
            }
            BinaryMask::from_fn(width, height, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
        }
        (MaskKind::ObjectFromAlpha, _) => {
            let img = image.ok_or_else(|| BenchError::Mask("object masks need the image".into()))?;
            if img.dims() != (width, height) {
                return Err(BenchError::Mask("image and mask dimensions differ".into()));
            }
            object(img, spec, &mut indexed_substream(spec.seed, "mask-object", 0))?
        }
        (kind, _) => {
            let draw = |rng: &mut StreamRng| match kind {
                MaskKind::Stroke => stroke(width, height, spec, rng),
                MaskKind::Bezier => bezier(width, height, rng),
                _ => rectangle(width, height, rng),
            };
            let mut m = draw(&mut indexed_substream(spec.seed, "mask", 0));
            for attempt in 1..MAX_ATTEMPTS {
                if in_range(&m) {
                    break;
                }
                m = draw(&mut indexed_substream(spec.seed, "mask", attempt));
            }
            m
        }
    };
    Ok(InpaintMask::new(mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_image;

    #[test]
    fn same_spec_same_mask() {
        for kind in [MaskKind::Stroke, MaskKind::Rectangle, MaskKind::Bezier] {
            let s = MaskSpec::new(kind, 11);
            assert_eq!(generate_mask(&s, 40, 30, None).unwrap(), generate_mask(&s, 40, 30, None).unwrap());
            assert_ne!(generate_mask(&s, 40, 30, None).unwrap(), generate_mask(&MaskSpec::new(kind, 12), 40, 30, None).unwrap());
        }
    }

    #[test]
    fn fixed_box_masks_its_area() {
        let s = MaskSpec { rect: Some([3, 2, 10, 7]), ..MaskSpec::new(MaskKind::Rectangle, 0) };
        let m = generate_mask(&s, 16, 12, None).unwrap();
        assert_eq!(m.mask().count(), 7 * 5);
        assert!(m.mask().get(3, 2) && m.mask().get(9, 6) && !m.mask().get(10, 6));
        let bad = MaskSpec { rect: Some([3, 2, 17, 7]), ..s };
        assert!(generate_mask(&bad, 16, 12, None).is_err());
    }

    #[test]
    fn random_coverage_in_range() {
        for kind in [MaskKind::Bezier, MaskKind::Stroke, MaskKind::Rectangle] {
            for seed in 0..100 {
                let c = generate_mask(&MaskSpec::new(kind, seed), 64, 64, None).unwrap().coverage();
                assert!(c > COVERAGE_RANGE.0 && c < COVERAGE_RANGE.1, "{kind:?} seed {seed}: {c}");
            }
        }
    }

    #[test]
    fn object_mask_covers_a_component() {
        let img = synth_image(48, 48, 2, 0);
        let m = generate_mask(&MaskSpec::new(MaskKind::ObjectFromAlpha, 1), 48, 48, Some(&img)).unwrap();
        assert!(img.alpha().iter().enumerate().any(|(i, &a)| a > 0.5 && m.is_masked(i)));
        let empty = RgbaImage::filled(8, 8, [0.0; 3], 0.0).unwrap();
        assert!(generate_mask(&MaskSpec::new(MaskKind::ObjectFromAlpha, 1), 8, 8, Some(&empty)).is_err());
        assert!(generate_mask(&MaskSpec::new(MaskKind::ObjectFromAlpha, 1), 8, 8, None).is_err());
    }

    #[test]
    fn point_in_square() {
        let sq = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        assert!(point_in_polygon([2.0, 2.0], &sq));
        assert!(!point_in_polygon([5.0, 2.0], &sq));
    }
}
