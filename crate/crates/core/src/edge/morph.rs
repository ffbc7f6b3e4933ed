use super::{BinaryMask, EdgeError, Plane};

/// Binary dilation with a `kernel x kernel` square, clipped at the borders.
pub fn dilate(mask: &BinaryMask, kernel: usize) -> Result<BinaryMask, EdgeError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(EdgeError::EvenKernel(kernel));
    }
    if kernel == 1 {
        return Ok(mask.clone());
    }
    let r = kernel / 2;
    let (w, h) = (mask.width(), mask.height());
    // Separable: a pixel is set if any pixel in its row window is set, then
    // the same along columns. Windows are evaluated with prefix counts.
    let mut rows = vec![false; w * h];
    let mut prefix = vec![0usize; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + mask.get(x, y) as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = BinaryMask::new(w, h);
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out.set(x, y, prefix[hi] > prefix[lo]);
        }
    }
    Ok(out)
}

/// Grey-level dilation (max filter) with a `kernel x kernel` square.
pub fn dilate_plane(img: &Plane, kernel: usize) -> Result<Plane, EdgeError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(EdgeError::EvenKernel(kernel));
    }
    let r = kernel / 2;
    let (w, h) = (img.width(), img.height());
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            rows[y * w + x] = (lo..hi).map(|i| img.get(i, y)).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(h);
        for x in 0..w {
            out[y * w + x] = (lo..hi).map(|j| rows[j * w + x]).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Plane::from_vec(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Set-definition dilation: p is set iff some set q has |p - q|_inf <= r.
    fn brute(mask: &BinaryMask, kernel: usize) -> BinaryMask {
        let r = (kernel / 2) as isize;
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (qx, qy) = (x as isize + dx, y as isize + dy);
                    qx >= 0
                        && qy >= 0
                        && (qx as usize) < mask.width()
                        && (qy as usize) < mask.height()
                        && mask.get(qx as usize, qy as usize)
                })
            })
        })
    }

    #[test]
    fn single_pixel_grows_to_block() {
        let mut m = BinaryMask::new(9, 9);
        m.set(4, 4, true);
        let d = dilate(&m, 5).unwrap();
        assert_eq!(d.count(), 25);
        assert!(d.get(2, 2) && d.get(6, 6) && !d.get(1, 4));
        // Clipped at the corner.
        let mut c = BinaryMask::new(9, 9);
        c.set(0, 0, true);
        assert_eq!(dilate(&c, 5).unwrap().count(), 9);
    }

    #[test]
    fn trivial_cases() {
        let e = BinaryMask::new(6, 5);
        assert!(dilate(&e, 5).unwrap().none());
        let m = BinaryMask::from_fn(6, 5, |x, y| (x + 2 * y) % 3 == 0);
        assert_eq!(dilate(&m, 1).unwrap(), m);
        assert_eq!(dilate(&m, 4), Err(EdgeError::EvenKernel(4)));
        assert_eq!(dilate(&m, 0), Err(EdgeError::EvenKernel(0)));
    }

    #[test]
    fn grey_dilation_of_binary_matches_binary() {
        let m = BinaryMask::from_fn(11, 7, |x, y| (x * y) % 5 == 1);
        let g = dilate_plane(&m.to_plane(), 3).unwrap();
        assert_eq!(g.threshold(0.5), dilate(&m, 3).unwrap());
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop::bool::weighted(0.15), w * h)
                .prop_map(move |d| BinaryMask::from_vec(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(m in arb_mask(), k in prop::sample::select(vec![1usize, 3, 5, 7])) {
            prop_assert_eq!(dilate(&m, k).unwrap(), brute(&m, k));
        }

        #[test]
        fn extensive_and_monotone(a in arb_mask(), k in prop::sample::select(vec![3usize, 5])) {
            let b = a.or(&BinaryMask::from_fn(a.width(), a.height(), |x, y| (x + y) % 4 == 0)).unwrap();
            let da = dilate(&a, k).unwrap();
            prop_assert!(a.is_subset_of(&da));
            prop_assert!(da.is_subset_of(&dilate(&b, k).unwrap()));
        }
    }
}
