use super::{EdgeError, Plane};

/// Mirror index without repeating the border sample (`dcb|abcd|cba`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflected borders. `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Plane, sigma: f64) -> Result<Plane, EdgeError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(EdgeError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect_index(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let srow = &tmp[sy * w..(sy + 1) * w];
            let orow = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                orow[x] += kv * srow[x];
            }
        }
    }
    Plane::from_vec(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_101() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn zero_sigma_is_identity_and_negative_errors() {
        let p = Plane::from_fn(5, 4, |x, y| (x * 7 + y) as f64 / 40.0);
        assert_eq!(gaussian_blur(&p, 0.0).unwrap(), p);
        assert_eq!(gaussian_blur(&p, -1.0), Err(EdgeError::NegativeSigma(-1.0)));
    }

    #[test]
    fn constant_image_unchanged() {
        let p = Plane::new(9, 7, 0.42);
        let b = gaussian_blur(&p, 1.7).unwrap();
        for v in b.data() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_response_matches_direct_kernel() {
        let mut p = Plane::new(21, 21, 0.0);
        p.set(10, 10, 1.0);
        let b = gaussian_blur(&p, 1.0).unwrap();
        // Direct evaluation of the sampled, normalized 2-D Gaussian.
        let norm: f64 = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).sum();
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                let expect = (-((dx * dx + dy * dy) as f64) / 2.0).exp() / (norm * norm);
                let got = b.get((10 + dx) as usize, (10 + dy) as usize);
                assert!((got - expect).abs() < 1e-12);
            }
        }
        assert!((b.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mean_preserved_away_from_borders() {
        let p = Plane::from_fn(40, 40, |x, y| {
            if (12..28).contains(&x) && (12..28).contains(&y) {
                ((x * 3 + y * 5) % 7) as f64 / 7.0
            } else {
                0.0
            }
        });
        let b = gaussian_blur(&p, 2.0).unwrap();
        assert!((p.mean() - b.mean()).abs() < 1e-6);
    }
}
