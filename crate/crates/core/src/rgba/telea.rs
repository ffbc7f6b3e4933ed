//! Fast-marching inpainting (Telea 2004).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::ImageError;

/// Neighborhood radius used when estimating a pixel from known samples.
pub const TELEA_RADIUS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillState {
    /// Source pixel; never modified.
    Known,
    /// Pixel to reconstruct.
    Fill,
    /// Neither used as a source nor filled.
    Excluded,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
    Excluded,
}

#[derive(PartialEq)]
struct Entry {
    t: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on arrival time, ties broken by index for determinism.
        other.t.total_cmp(&self.t).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Marcher<'a> {
    w: usize,
    h: usize,
    flags: Vec<Flag>,
    t: Vec<f64>,
    channels: &'a mut [Vec<f64>],
    radius: isize,
}

impl Marcher<'_> {
    fn has_value(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.w
            && (y as usize) < self.h
            && matches!(self.flags[y as usize * self.w + x as usize], Flag::Known | Flag::Band)
    }

    fn tval(&self, x: isize, y: isize) -> Option<f64> {
        self.has_value(x, y).then(|| self.t[y as usize * self.w + x as usize])
    }

    fn solve(a: Option<f64>, b: Option<f64>) -> f64 {
        match (a, b) {
            (None, None) => f64::INFINITY,
            (Some(a), None) | (None, Some(a)) => a + 1.0,
            (Some(a), Some(b)) => {
                let d = a - b;
                if d.abs() >= 1.0 {
                    a.min(b) + 1.0
                } else {
                    (a + b + (2.0 - d * d).sqrt()) / 2.0
                }
            }
        }
    }

    fn arrival(&self, x: isize, y: isize) -> f64 {
        let l = self.tval(x - 1, y);
        let r = self.tval(x + 1, y);
        let u = self.tval(x, y - 1);
        let d = self.tval(x, y + 1);
        [Self::solve(l, u), Self::solve(r, u), Self::solve(l, d), Self::solve(r, d)]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    fn diff(&self, x: isize, y: isize, dx: isize, dy: isize, value: impl Fn(isize, isize) -> f64) -> f64 {
        let fwd = self.has_value(x + dx, y + dy);
        let bwd = self.has_value(x - dx, y - dy);
        match (fwd, bwd) {
            (true, true) => 0.5 * (value(x + dx, y + dy) - value(x - dx, y - dy)),
            (true, false) => value(x + dx, y + dy) - value(x, y),
            (false, true) => value(x, y) - value(x - dx, y - dy),
            (false, false) => 0.0,
        }
    }

    fn inpaint_pixel(&mut self, x: isize, y: isize) {
        let w = self.w;
        let tp = self.t[y as usize * w + x as usize];
        let tv = |xx: isize, yy: isize| self.t[yy as usize * w + xx as usize];
        let mut gtx = self.diff(x, y, 1, 0, |xx, yy| if (xx, yy) == (x, y) { tp } else { tv(xx, yy) });
        let mut gty = self.diff(x, y, 0, 1, |xx, yy| if (xx, yy) == (x, y) { tp } else { tv(xx, yy) });
        let gn = (gtx * gtx + gty * gty).sqrt();
        if gn > 0.0 {
            gtx /= gn;
            gty /= gn;
        }
        let nch = self.channels.len();
        let mut acc = vec![0.0; nch];
        let mut wsum = 0.0;
        let r = self.radius;
        for qy in (y - r)..=(y + r) {
            for qx in (x - r)..=(x + r) {
                let (rx, ry) = ((x - qx) as f64, (y - qy) as f64);
                let d2 = rx * rx + ry * ry;
                if d2 == 0.0 || d2 > (r * r) as f64 || !self.has_value(qx, qy) {
                    continue;
                }
                let len = d2.sqrt();
                let mut dir = (rx * gtx + ry * gty) / len;
                if dir.abs() <= 0.01 {
                    dir = 1e-6;
                }
                let dst = 1.0 / d2;
                let lev = 1.0 / (1.0 + (tv(qx, qy) - tp).abs());
                let weight = (dir * dst * lev).abs();
                let qi = qy as usize * w + qx as usize;
                for (c, a) in acc.iter_mut().enumerate() {
                    let ch = &self.channels[c];
                    let val = |xx: isize, yy: isize| ch[yy as usize * w + xx as usize];
                    let gx = self.diff(qx, qy, 1, 0, val);
                    let gy = self.diff(qx, qy, 0, 1, val);
                    *a += weight * (ch[qi] + gx * rx + gy * ry);
                }
                wsum += weight;
            }
        }
        if wsum > 0.0 {
            let pi = y as usize * w + x as usize;
            for (c, a) in acc.into_iter().enumerate() {
                self.channels[c][pi] = (a / wsum).clamp(0.0, 1.0);
            }
        }
    }
}

/// Fills every `Fill` pixel of the planar `channels` by marching inward from
/// the `Known` region; filled pixels become sources for later ones.
pub fn telea_inpaint(
    channels: &mut [Vec<f64>],
    width: usize,
    height: usize,
    state: &[FillState],
    radius: usize,
) -> Result<(), ImageError> {
    let n = width * height;
    if state.len() != n || channels.iter().any(|c| c.len() != n) {
        return Err(ImageError::BufferSize { expected: n, got: state.len() });
    }
    if !state.contains(&FillState::Fill) {
        return Ok(());
    }
    if !state.contains(&FillState::Known) {
        return Err(ImageError::NoSourcePixels);
    }
    let flags: Vec<Flag> = state
        .iter()
        .map(|s| match s {
            FillState::Known => Flag::Known,
            FillState::Fill => Flag::Inside,
            FillState::Excluded => Flag::Excluded,
        })
        .collect();
    let t: Vec<f64> = state.iter().map(|s| if *s == FillState::Fill { f64::INFINITY } else { 0.0 }).collect();
    let mut m = Marcher { w: width, h: height, flags, t, channels, radius: radius as isize };

    let mut heap = BinaryHeap::new();
    let neighbors = |x: isize, y: isize| [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
    let inside = |m: &Marcher, x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < m.w && (y as usize) < m.h && m.flags[y as usize * m.w + x as usize] == Flag::Inside
    };
    for i in 0..n {
        if m.flags[i] != Flag::Known {
            continue;
        }
        let (x, y) = ((i % width) as isize, (i / width) as isize);
        if neighbors(x, y).iter().any(|&(nx, ny)| inside(&m, nx, ny)) {
            m.flags[i] = Flag::Band;
            heap.push(Entry { t: 0.0, idx: i });
        }
    }

    while let Some(Entry { idx, .. }) = heap.pop() {
        if m.flags[idx] != Flag::Band {
            continue;
        }
        m.flags[idx] = Flag::Known;
        let (x, y) = ((idx % width) as isize, (idx / width) as isize);
        for (nx, ny) in neighbors(x, y) {
            if !inside(&m, nx, ny) {
                continue;
            }
            let ni = ny as usize * width + nx as usize;
            m.t[ni] = m.arrival(nx, ny);
            m.inpaint_pixel(nx, ny);
            m.flags[ni] = Flag::Band;
            heap.push(Entry { t: m.t[ni], idx: ni });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_hole_in_uniform_field() {
        let mut ch = vec![vec![0.3; 25]];
        ch[0][12] = 0.9;
        let mut state = vec![FillState::Known; 25];
        state[12] = FillState::Fill;
        telea_inpaint(&mut ch, 5, 5, &state, TELEA_RADIUS).unwrap();
        assert!((ch[0][12] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        // First-order extrapolation reproduces an affine field.
        let (w, h) = (16, 12);
        let ramp = |x: usize, y: usize| 0.1 + 0.03 * x as f64 + 0.02 * y as f64;
        let mut ch = vec![(0..w * h).map(|i| ramp(i % w, i / w)).collect::<Vec<_>>()];
        let mut state = vec![FillState::Known; w * h];
        for y in 4..8 {
            for x in 5..11 {
                state[y * w + x] = FillState::Fill;
                ch[0][y * w + x] = 0.0;
            }
        }
        telea_inpaint(&mut ch, w, h, &state, TELEA_RADIUS).unwrap();
        for y in 4..8 {
            for x in 5..11 {
                assert!((ch[0][y * w + x] - ramp(x, y)).abs() < 1e-9, "({x},{y})");
            }
        }
    }

    #[test]
    fn excluded_pixels_untouched_and_no_source_errors() {
        let mut ch = vec![vec![0.5, 0.2, 0.7]];
        let state = [FillState::Known, FillState::Fill, FillState::Excluded];
        telea_inpaint(&mut ch, 3, 1, &state, 5).unwrap();
        assert_eq!(ch[0][2], 0.7);
        assert!((ch[0][1] - 0.5).abs() < 1e-12);
        let mut ch = vec![vec![0.0; 4]];
        let err = telea_inpaint(&mut ch, 2, 2, &[FillState::Fill; 4], 5).unwrap_err();
        assert!(matches!(err, ImageError::NoSourcePixels));
    }
}
