//! Procedural RGBA corpus: antialiased shapes over transparent canvases.
//!
//! Stands in for real transparent-image datasets in training and
//! benchmarks. Hidden rgb under zero alpha is a random striped colour, so
//! any degradation that exposes it is visible in the composites.

use rand::Rng;

use crate::rgba::RgbaImage;
use crate::rng::{indexed_substream, uniform, StreamRng};

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, round: f64, angle: f64 },
    Ring { cx: f64, cy: f64, r: f64, thick: f64 },
    Triangle { p: [[f64; 2]; 3] },
}

impl Shape {
    fn random(rng: &mut StreamRng, w: f64, h: f64) -> Self {
        let s = w.min(h);
        let cx = uniform(rng, 0.25 * w, 0.75 * w);
        let cy = uniform(rng, 0.25 * h, 0.75 * h);
        match rng.random_range(0..4) {
            0 => Shape::Ellipse { cx, cy, rx: uniform(rng, 0.1, 0.3) * s, ry: uniform(rng, 0.1, 0.3) * s },
            1 => Shape::Rect {
                cx,
                cy,
                hw: uniform(rng, 0.08, 0.28) * s,
                hh: uniform(rng, 0.08, 0.28) * s,
                round: uniform(rng, 0.0, 0.06) * s,
                angle: uniform(rng, 0.0, std::f64::consts::PI),
            },
            2 => Shape::Ring { cx, cy, r: uniform(rng, 0.15, 0.3) * s, thick: uniform(rng, 0.04, 0.1) * s },
            _ => {
                let r = uniform(rng, 0.15, 0.32) * s;
                let a0 = uniform(rng, 0.0, std::f64::consts::TAU);
                let p = [0.0, 2.1, 4.2].map(|o: f64| {
                    let a = a0 + o + uniform(rng, -0.3, 0.3);
                    [cx + r * a.cos(), cy + r * a.sin()]
                });
                Shape::Triangle { p }
            }
        }
    }

    /// Signed distance in pixels, negative inside.
    fn sdf(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                let k = dx.hypot(dy);
                if k < 1e-12 {
                    return -rx.min(ry);
                }
                // level-set value over its gradient norm; exact on circles
                (k - 1.0) * k / (dx / rx).hypot(dy / ry)
            }
            Shape::Rect { cx, cy, hw, hh, round, angle } => {
                let (s, c) = angle.sin_cos();
                let (px, py) = ((x - cx) * c + (y - cy) * s, -(x - cx) * s + (y - cy) * c);
                let qx = px.abs() - hw + round;
                let qy = py.abs() - hh + round;
                qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0) - round
            }
            Shape::Ring { cx, cy, r, thick } => ((x - cx).hypot(y - cy) - r).abs() - thick / 2.0,
            Shape::Triangle { p } => {
                let mut d = f64::INFINITY;
                let mut sign = 0i32;
                for i in 0..3 {
                    let (a, b) = (p[i], p[(i + 1) % 3]);
                    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                    let (wx, wy) = (x - a[0], y - a[1]);
                    let t = ((wx * ex + wy * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
                    d = d.min((wx - ex * t).hypot(wy - ey * t));
                    sign += if ex * wy - ey * wx > 0.0 { 1 } else { -1 };
                }
                if sign.abs() == 3 {
                    -d
                } else {
                    d
                }
            }
        }
    }
}

impl Shape {
    fn noun(&self) -> &'static str {
        match self {
            Shape::Ellipse { rx, ry, .. } if (rx / ry - 1.0).abs() < 0.15 => "circle",
            Shape::Ellipse { .. } => "ellipse",
            Shape::Rect { round, hw, hh, .. } if *round > 0.25 * hw.min(*hh) => "rounded rectangle",
            Shape::Rect { .. } => "rectangle",
            Shape::Ring { .. } => "ring",
            Shape::Triangle { .. } => "triangle",
        }
    }
}

const COLOR_NAMES: [(&str, [f64; 3]); 11] = [
    ("black", [0.0, 0.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("grey", [0.5, 0.5, 0.5]),
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.7, 0.2]),
    ("blue", [0.1, 0.2, 0.9]),
    ("yellow", [0.95, 0.9, 0.1]),
    ("orange", [1.0, 0.55, 0.1]),
    ("purple", [0.55, 0.15, 0.7]),
    ("cyan", [0.1, 0.85, 0.9]),
    ("pink", [1.0, 0.6, 0.75]),
];

fn color_name(c: [f64; 3]) -> &'static str {
    let d = |r: &[f64; 3]| (0..3).map(|k| (r[k] - c[k]).powi(2)).sum::<f64>();
    COLOR_NAMES.iter().min_by(|a, b| d(&a.1).total_cmp(&d(&b.1))).expect("non-empty").0
}

fn random_color(rng: &mut StreamRng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// A synthetic image with a caption of every shape (`prompt`) and of the
/// first one only (`prompt_simple`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: RgbaImage,
    pub prompt: String,
    pub prompt_simple: String,
}

/// One synthetic image; the same `(width, height, seed, index)` always gives
/// the same pixels.
pub fn synth_image(width: usize, height: usize, seed: u64, index: u64) -> RgbaImage {
    synth_sample(width, height, seed, index).image
}

pub fn synth_sample(width: usize, height: usize, seed: u64, index: u64) -> SynthSample {
    let mut rng = indexed_substream(seed, "synth", index);
    let (wf, hf) = (width as f64, height as f64);
    let shapes: Vec<(Shape, [f64; 3], [f64; 3], f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            let shape = Shape::random(&mut rng, wf, hf);
            let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
            // mostly opaque shapes, sometimes translucent
            let opacity = if rng.random::<f64>() < 0.8 { 1.0 } else { uniform(&mut rng, 0.4, 0.9) };
            (shape, c0, c1, opacity)
        })
        .collect();
    let hidden = random_color(&mut rng);
    let stripe = random_color(&mut rng);
    let period = rng.random_range(3..9);
    let grad_angle = uniform(&mut rng, 0.0, std::f64::consts::TAU);
    let (gs, gc) = grad_angle.sin_cos();
    let n = width * height;
    let mut rgb = vec![0.0; 3 * n];
    let mut alpha = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut a = 0.0;
            let mut col = if (x + y) / period % 2 == 0 { hidden } else { stripe };
            for (shape, c0, c1, opacity) in &shapes {
                let cover = (0.5 - shape.sdf(px, py)).clamp(0.0, 1.0) * opacity;
                if cover <= 0.0 {
                    continue;
                }
                let t = ((px / wf - 0.5) * gc + (py / hf - 0.5) * gs + 0.5).clamp(0.0, 1.0);
                let fg: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
                // straight-alpha over of the new shape on the accumulated layer
                let out_a = cover + a * (1.0 - cover);
                let prev = if a > 0.0 { col } else { fg };
                col = std::array::from_fn(|c| (cover * fg[c] + a * (1.0 - cover) * prev[c]) / out_a);
                a = out_a;
            }
            alpha[i] = a;
            for c in 0..3 {
                rgb[c * n + i] = col[c].clamp(0.0, 1.0);
            }
        }
    }
    let names: Vec<String> = shapes
        .iter()
        .map(|(shape, c0, _, opacity)| {
            let see = if *opacity < 1.0 { "translucent " } else { "" };
            format!("a {see}{} {}", color_name(*c0), shape.noun())
        })
        .collect();
    SynthSample {
        image: RgbaImage::new(width, height, rgb, alpha).expect("values clamped to [0, 1]"),
        prompt: names.join(" and "),
        prompt_simple: names[0].clone(),
    }
}

pub fn synth_corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<RgbaImage> {
    (0..count as u64).map(|i| synth_image(width, height, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::alpha_edge_mask;

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(synth_image(32, 32, 4, 0), synth_image(32, 32, 4, 0));
        assert_ne!(synth_image(32, 32, 4, 0), synth_image(32, 32, 4, 1));
    }

    #[test]
    fn images_have_foreground_background_and_edges() {
        for img in synth_corpus(20, 48, 40, 9) {
            assert_eq!(img.dims(), (48, 40));
            assert!(img.alpha().contains(&0.0));
            assert!(img.alpha().iter().any(|&a| a > 0.3));
            assert!(alpha_edge_mask(&img.alpha_plane()).mask.count() > 0);
        }
    }

    #[test]
    fn captions_name_every_shape() {
        let s = synth_sample(32, 32, 3, 5);
        assert_eq!(s.image, synth_image(32, 32, 3, 5));
        assert!(s.prompt.starts_with(&s.prompt_simple));
        assert_eq!(s.prompt.matches("a ").count(), s.prompt.matches(" and ").count() + 1);
        assert_eq!(color_name([0.88, 0.12, 0.1]), "red");
    }

    #[test]
    fn circle_distance_is_exact() {
        let s = Shape::Ellipse { cx: 0.0, cy: 0.0, rx: 5.0, ry: 5.0 };
        assert!((s.sdf(8.0, 0.0) - 3.0).abs() < 1e-12);
        assert!((s.sdf(0.0, 2.0) + 3.0).abs() < 1e-12);
        let t = Shape::Triangle { p: [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]] };
        assert!(t.sdf(2.0, 2.0) < 0.0 && t.sdf(-1.0, 5.0) > 0.0);
    }
}
