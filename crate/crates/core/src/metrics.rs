//! Recovery, color fidelity and segmentation overlap scores.

use crate::error::{Error, Result};
use crate::image::{ensure_dims, ColorImage, Mask};

/// Share of foreground pixels whose background was recovered, in percent.
/// An empty foreground counts as fully recovered.
pub fn recovery_percentage(mask: &Mask, bg_valid: &Mask) -> Result<f64> {
    ensure_dims("background validity", mask.dims(), bg_valid.dims())?;
    let total = mask.count();
    if total == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * mask.and(bg_valid).count() as f64 / total as f64)
}

/// Mean absolute per-channel difference over `eval_mask`.
pub fn background_error(recovered: &ColorImage, truth: &ColorImage, eval_mask: &Mask) -> Result<f64> {
    ensure_dims("ground truth", recovered.dims(), truth.dims())?;
    ensure_dims("evaluation mask", recovered.dims(), eval_mask.dims())?;
    let mut sum = 0u64;
    let mut n = 0u64;
    for ((a, b), &m) in recovered.data().iter().zip(truth.data()).zip(eval_mask.data()) {
        if m {
            for c in 0..3 {
                sum += a[c].abs_diff(b[c]) as u64;
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(sum as f64 / n as f64)
}

/// Intersection over union; two empty masks agree perfectly.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    ensure_dims("mask", a.dims(), b.dims())?;
    let union = a.or(b).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.and(b).count() as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovery_examples() {
        let empty = Mask::empty(4, 4);
        assert_eq!(recovery_percentage(&empty, &empty).unwrap(), 100.0);
        let mask = Mask::from_fn(20, 20, |x, y| y * 20 + x < 200);
        let valid = Mask::from_fn(20, 20, |x, y| y * 20 + x < 150);
        assert_eq!(recovery_percentage(&mask, &valid).unwrap(), 75.0);
        // validity outside the mask does not count
        assert_eq!(recovery_percentage(&mask, &Mask::from_fn(20, 20, |_, y| y >= 10)).unwrap(), 0.0);
    }

    #[test]
    fn background_error_examples() {
        let a = ColorImage::filled(3, 2, [10, 20, 30]);
        let all = Mask::from_fn(3, 2, |_, _| true);
        assert_eq!(background_error(&a, &a, &all).unwrap(), 0.0);
        let b = ColorImage::filled(3, 2, [20, 30, 40]);
        assert_eq!(background_error(&b, &a, &all).unwrap(), 10.0);
        assert!(matches!(background_error(&a, &b, &Mask::empty(3, 2)), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn iou_examples() {
        let a = Mask::from_fn(4, 1, |x, _| x < 2);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &Mask::from_fn(4, 1, |x, _| x >= 2)).unwrap(), 0.0);
        assert!((mask_iou(&a, &Mask::from_fn(4, 1, |x, _| x == 1 || x == 2)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&Mask::empty(2, 2), &Mask::empty(2, 2)).unwrap(), 1.0);
        assert!(mask_iou(&a, &Mask::empty(2, 2)).is_err());
    }

    fn masks(n: usize) -> impl Strategy<Value = (Mask, Mask)> {
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
            .prop_map(move |(a, b)| (Mask::new(n, 1, a).unwrap(), Mask::new(n, 1, b).unwrap()))
    }

    proptest! {
        #[test]
        fn scores_stay_in_range((a, b) in masks(37), offs in prop::collection::vec(any::<[u8; 3]>(), 37)) {
            let r = recovery_percentage(&a, &b).unwrap();
            prop_assert!((0.0..=100.0).contains(&r));
            let iou = mask_iou(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&iou));
            let x = ColorImage::new(37, 1, offs).unwrap();
            let y = ColorImage::filled(37, 1, [128; 3]);
            if let Ok(e) = background_error(&x, &y, &a) {
                prop_assert!((0.0..=255.0).contains(&e));
            }
        }
    }
}
