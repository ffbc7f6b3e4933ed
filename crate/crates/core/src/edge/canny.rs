use std::collections::VecDeque;

use super::{reflect_index, BinaryMask, Plane};

/// Integer 5x5 Gaussian approximation for sigma = 1.4 (sum 159).
pub const CANNY_KERNEL: [[i64; 5]; 5] = [
    [2, 4, 5, 4, 2],
    [4, 9, 12, 9, 4],
    [5, 12, 15, 12, 5],
    [4, 9, 12, 9, 4],
    [2, 4, 5, 4, 2],
];
pub const CANNY_KERNEL_SUM: i64 = 159;

/// Binary edge mask plus the Canny threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub mask: BinaryMask,
    /// Low hysteresis threshold on the 0-255 scale.
    pub threshold: f64,
}

fn quantize(alpha: &Plane) -> Vec<i64> {
    alpha.data().iter().map(|&a| (a.clamp(0.0, 1.0) * 255.0).round() as i64).collect()
}

/// Sobel gradients of the smoothed 8-bit image, in units of 159 x levels.
///
/// Everything up to here is integer arithmetic, so `alpha` and `1 - alpha`
/// produce exactly negated gradients.
fn gradients(alpha: &Plane) -> (Vec<i64>, Vec<i64>) {
    let (w, h) = (alpha.width(), alpha.height());
    let q = quantize(alpha);
    let mut s = vec![0i64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0;
            for (ky, row) in CANNY_KERNEL.iter().enumerate() {
                let sy = reflect_index(y as isize + ky as isize - 2, h);
                for (kx, kv) in row.iter().enumerate() {
                    let sx = reflect_index(x as isize + kx as isize - 2, w);
                    acc += kv * q[sy * w + sx];
                }
            }
            s[y * w + x] = acc;
        }
    }
    let at = |x: isize, y: isize| s[reflect_index(y, h) * w + reflect_index(x, w)];
    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

fn magnitude(gx: i64, gy: i64) -> f64 {
    ((gx * gx + gy * gy) as f64).sqrt() / CANNY_KERNEL_SUM as f64
}

/// L2 Sobel magnitude of the smoothed alpha on the 0-255 scale.
pub fn sobel_magnitude(alpha: &Plane) -> Plane {
    let (gx, gy) = gradients(alpha);
    let data = gx.iter().zip(&gy).map(|(&a, &b)| magnitude(a, b)).collect();
    Plane::from_vec(alpha.width(), alpha.height(), data).expect("dims match")
}

/// Canny edges of an alpha map.
///
/// The alpha is quantized to 8 bits, smoothed with the sigma = 1.4 integer
/// kernel, differentiated with Sobel, thinned by non-maximum suppression and
/// tracked with 8-connected hysteresis between `threshold` and `2 * threshold`
/// (both on the 0-255 scale).
pub fn canny(alpha: &Plane, threshold: f64) -> EdgeMask {
    let (w, h) = (alpha.width(), alpha.height());
    let (gx, gy) = gradients(alpha);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(&a, &b)| magnitude(a, b)).collect();
    let m_at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // tan(22.5 deg) and tan(67.5 deg)
    const T1: f64 = 0.414_213_562_373_095_1;
    const T2: f64 = 2.414_213_562_373_095;
    let low = threshold;
    let high = 2.0 * threshold;
    let mut strong = vec![false; w * h];
    let mut weak = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 || m <= low {
                continue;
            }
            let (ax, ay) = (gx[i].abs() as f64, gy[i].abs() as f64);
            let (dx, dy): (isize, isize) = if ay <= T1 * ax {
                (1, 0)
            } else if ay >= T2 * ax {
                (0, 1)
            } else if (gx[i] > 0) == (gy[i] > 0) {
                (1, 1)
            } else {
                (1, -1)
            };
            let (xi, yi) = (x as isize, y as isize);
            let before = m_at(xi - dx, yi - dy);
            let after = m_at(xi + dx, yi + dy);
            // Ties along the gradient keep the first sample only.
            if m > before && m >= after {
                weak[i] = true;
                strong[i] = m > high;
            }
        }
    }

    let mut out = BinaryMask::new(w, h);
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| strong[i]).collect();
    for &i in &queue {
        out.data_mut()[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if weak[j] && !out.data()[j] {
                    out.data_mut()[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    EdgeMask { mask: out, threshold }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_159() {
        let s: i64 = CANNY_KERNEL.iter().flatten().sum();
        assert_eq!(s, CANNY_KERNEL_SUM);
    }

    #[test]
    fn constant_image_has_no_edges() {
        assert!(canny(&Plane::new(16, 16, 0.3), 20.0).mask.none());
    }

    #[test]
    fn vertical_step_gives_single_line() {
        let a = Plane::from_fn(32, 16, |x, _| if x < 16 { 0.0 } else { 1.0 });
        let e = canny(&a, 20.0).mask;
        for y in 0..16 {
            let cols: Vec<usize> = (0..32).filter(|&x| e.get(x, y)).collect();
            assert_eq!(cols, vec![15], "row {y}");
        }
    }

    #[test]
    fn faint_step_below_thresholds() {
        let a = Plane::from_fn(32, 16, |x, _| if x < 16 { 0.0 } else { 10.0 / 255.0 });
        assert!(canny(&a, 20.0).mask.none());
        // The same step is picked up once the thresholds are low enough.
        assert!(!canny(&a, 5.0).mask.none());
    }

    #[test]
    fn edges_lie_on_nonzero_gradient() {
        let a = Plane::from_fn(24, 24, |x, y| ((x as f64 - 12.0).hypot(y as f64 - 12.0) < 7.0) as u8 as f64);
        let e = canny(&a, 20.0).mask;
        let m = sobel_magnitude(&a);
        assert!(!e.none());
        for (i, &b) in e.data().iter().enumerate() {
            if b {
                assert!(m.data()[i] > 0.0);
            }
        }
    }
}
