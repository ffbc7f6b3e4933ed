//! Dense numeric kernels: GEMM wrapper and im2col convolution.

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`. A transposed operand is read
/// through swapped strides, never copied.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe exactly those buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// 1x1, stride 1, no padding: the image already is its column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `(cin, h, w)` image into a `(cin*k*k, oh*ow)` matrix.
pub fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image.
pub fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched forward: `x` is `(n, cin, h, w)`, `weight` is `(cout, cin, k, k)`.
pub fn conv2d_forward(x: &[f64], n: usize, g: &ConvGeom, weight: &[f64], cout: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let (kr, p) = (g.col_rows(), g.col_cols());
    let in_sz = g.cin * g.h * g.w;
    let mut out = vec![0.0; n * cout * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kr * p] };
    for b in 0..n {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let ob = &mut out[b * cout * p..(b + 1) * cout * p];
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * p..(co + 1) * p].fill(bv);
            }
        }
        let cols: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        gemm(cout, kr, p, weight, false, cols, false, ob, if bias.is_some() { 1.0 } else { 0.0 });
    }
    out
}

/// Gradients of a batched convolution. `dx` and `dw` are accumulated into
/// only when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    cout: usize,
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (kr, p) = (g.col_rows(), g.col_cols());
    let in_sz = g.cin * g.h * g.w;
    if let Some(db) = db {
        for b in 0..n {
            for co in 0..cout {
                db[co] += dy[(b * cout + co) * p..(b * cout + co + 1) * p].iter().sum::<f64>();
            }
        }
    }
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kr * p] };
    let mut dcol = if g.is_pointwise() || dx.is_none() { Vec::new() } else { vec![0.0; kr * p] };
    for b in 0..n {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let dyb = &dy[b * cout * p..(b + 1) * cout * p];
        if let Some(dw) = dw.as_deref_mut() {
            let cols: &[f64] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            gemm(cout, p, kr, dyb, false, cols, true, dw, 1.0);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * in_sz..(b + 1) * in_sz];
            if g.is_pointwise() {
                gemm(kr, cout, p, weight, true, dyb, false, dxb, 1.0);
            } else {
                gemm(kr, cout, p, weight, true, dyb, false, &mut dcol, 0.0);
                col2im(&dcol, g, dxb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], g: &ConvGeom, w: &[f64], cout: usize) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..g.cin {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    s += x[(ci * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0), (4, 1, 2)] {
            let g = ConvGeom { cin: 3, h: 7, w: 6, k, stride, pad };
            let x: Vec<f64> = (0..3 * 42).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let cout = 2;
            let w: Vec<f64> = (0..cout * 3 * k * k).map(|i| ((i * 13) % 7) as f64 * 0.5 - 1.5).collect();
            let fast = conv2d_forward(&x, 1, &g, &w, cout, None);
            assert_eq!(fast, naive_conv(&x, &g, &w, cout), "k={k} s={stride} p={pad}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom { cin: 2, h: 5, w: 4, k: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; 40];
        col2im(&c, &g, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
