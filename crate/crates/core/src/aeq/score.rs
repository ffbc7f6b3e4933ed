use serde::Serialize;

use super::{build_input, AeqClassifier, AeqError};
use crate::edge::{BinaryMask, Plane};
use crate::rgba::{InpaintMask, RgbaImage};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AeqReport {
    pub score: f64,
    pub evaluated_pixels: usize,
    /// Set when the evaluation region is empty; the score is then 1.
    pub empty_region: bool,
    #[serde(skip)]
    pub probability: Plane,
}

/// `1 - mean(p)` over `region`, clamped to `[0, 1]`.
pub fn aeq_from_probability(probability: &Plane, region: &BinaryMask) -> Result<AeqReport, AeqError> {
    if (probability.width(), probability.height()) != (region.width(), region.height()) {
        return Err(AeqError::Config("probability map and region differ in size".into()));
    }
    let (sum, count) = probability
        .data()
        .iter()
        .zip(region.data())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (&p, _)| (s + p, c + 1));
    let score = if count == 0 { 1.0 } else { (1.0 - sum / count as f64).clamp(0.0, 1.0) };
    Ok(AeqReport { score, evaluated_pixels: count, empty_region: count == 0, probability: probability.clone() })
}

/// Alpha edge band of `img`, restricted to `mask` when one is given.
pub fn evaluation_region(img: &RgbaImage, edge_band: &BinaryMask, mask: Option<&InpaintMask>) -> Result<BinaryMask, AeqError> {
    match mask {
        None => Ok(edge_band.clone()),
        Some(m) => {
            m.check_dims(img.width(), img.height())?;
            Ok(edge_band.and(m.mask())?)
        }
    }
}

/// Edge quality of `img` over its alpha edge band intersected with `mask`.
/// `None` evaluates the whole image.
pub fn compute_aeq(img: &RgbaImage, mask: Option<&InpaintMask>, clf: &AeqClassifier) -> Result<AeqReport, AeqError> {
    let input = build_input(img);
    let region = evaluation_region(img, &input.edge_mask, mask)?;
    let p = clf.low_probability(&input)?;
    aeq_from_probability(&p, &region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aeq::AeqConfig;

    fn halves() -> (Plane, BinaryMask) {
        let region = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (1..7).contains(&y));
        let p = Plane::from_fn(8, 8, |x, _| if x < 4 { 1.0 } else { 0.0 });
        (p, region)
    }

    #[test]
    fn forced_probabilities() {
        let (_, region) = halves();
        let zero = aeq_from_probability(&Plane::new(8, 8, 0.0), &region).unwrap();
        assert_eq!(zero.score, 1.0);
        assert_eq!(zero.evaluated_pixels, 24);
        assert_eq!(aeq_from_probability(&Plane::new(8, 8, 1.0), &region).unwrap().score, 0.0);
        let (p, region) = halves();
        assert_eq!(aeq_from_probability(&p, &region).unwrap().score, 0.5);
    }

    #[test]
    fn empty_region_is_flagged() {
        let r = aeq_from_probability(&Plane::new(4, 4, 0.7), &BinaryMask::new(4, 4)).unwrap();
        assert_eq!((r.score, r.evaluated_pixels, r.empty_region), (1.0, 0, true));
    }

    #[test]
    fn opaque_image_has_empty_region() {
        let clf = AeqClassifier::new(AeqConfig::with_base_width(2, 0)).unwrap();
        let img = RgbaImage::filled(16, 16, [0.5; 3], 1.0).unwrap();
        assert!(compute_aeq(&img, None, &clf).unwrap().empty_region);
    }

    #[test]
    fn untrained_classifier_scores_half() {
        let clf = AeqClassifier::new(AeqConfig::with_base_width(2, 0)).unwrap();
        let mut img = RgbaImage::filled(16, 16, [0.5; 3], 0.0).unwrap();
        for y in 4..12 {
            for x in 4..12 {
                img.set_pixel(x, y, [0.2, 0.3, 0.4, 1.0]);
            }
        }
        let r = compute_aeq(&img, None, &clf).unwrap();
        assert!(r.evaluated_pixels > 0);
        assert_eq!(r.score, 0.5);
        let left = InpaintMask::from_bools(16, 16, (0..256).map(|i| i % 16 < 8).collect()).unwrap();
        let part = compute_aeq(&img, Some(&left), &clf).unwrap();
        assert!(part.evaluated_pixels < r.evaluated_pixels && part.evaluated_pixels > 0);
    }
}
