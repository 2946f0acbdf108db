//! Box and L∞-ball projection utilities shared by all attacks.

use ndarray::Array4;

use crate::core::ImageBatch;
use crate::error::{AdvError, Result};

/// Clamps every element of `x` into `[0,1]`.
///
/// Errors if the input contains non-finite values (a corrupted tensor rather
/// than an out-of-range one).
pub fn clip_to_box(x: &Array4<f32>) -> Result<ImageBatch> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AdvError::Data("clip_to_box: input tensor contains non-finite values".into()));
    }
    ImageBatch::new(clip_to_box_raw(x))
}

/// The raw clamp, without finiteness validation or wrapping. NaN propagates.
pub fn clip_to_box_raw(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| v.clamp(0.0, 1.0))
}

/// Projects `x_adv` onto the intersection of the L∞ ball of radius
/// `epsilon` around `x_orig` and the `[0,1]` box.
pub fn project_linf(x_adv: &Array4<f32>, x_orig: &ImageBatch, epsilon: f32) -> Result<ImageBatch> {
    if x_adv.dim() != x_orig.data().dim() {
        return Err(AdvError::Shape(format!(
            "project_linf: adversarial shape {:?} != original shape {:?}",
            x_adv.dim(),
            x_orig.data().dim()
        )));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(AdvError::Config(format!("project_linf: epsilon must be >= 0, got {epsilon}")));
    }
    if x_adv.iter().any(|v| !v.is_finite()) {
        return Err(AdvError::Data("project_linf: input tensor contains non-finite values".into()));
    }
    ImageBatch::new(project_linf_raw(x_adv, x_orig.data(), epsilon))
}

/// The raw projection: ball clamp followed by box clamp, element-wise.
pub fn project_linf_raw(x_adv: &Array4<f32>, x_orig: &Array4<f32>, epsilon: f32) -> Array4<f32> {
    let mut out = x_adv.clone();
    ndarray::Zip::from(&mut out).and(x_orig).for_each(|a, &o| {
        *a = a.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(values: &[f32]) -> Array4<f32> {
        Array4::from_shape_vec((1, 1, 1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn clip_is_identity_on_valid_input() {
        let x = batch(&[0.0, 0.25, 1.0]);
        let clipped = clip_to_box(&x).unwrap();
        assert_eq!(clipped.data(), &x);
    }

    #[test]
    fn clip_clamps_out_of_range_values() {
        let x = batch(&[1.3, -0.2, 0.5]);
        let clipped = clip_to_box(&x).unwrap();
        assert_eq!(clipped.data().as_slice().unwrap(), &[1.0, 0.0, 0.5]);
    }

    // Element-wise comparison against a scalar loop oracle on a mixed batch.
    #[test]
    fn clip_only_changes_out_of_range_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f32> = (0..256).map(|_| rng.random_range(-0.5..1.5f32)).collect();
        let x = Array4::from_shape_vec((4, 1, 8, 8), vals.clone()).unwrap();
        let clipped = clip_to_box(&x).unwrap();
        let oracle: Vec<f32> = vals
            .iter()
            .map(|&v| if v < 0.0 { 0.0 } else if v > 1.0 { 1.0 } else { v })
            .collect();
        assert_eq!(clipped.data().as_slice().unwrap(), oracle.as_slice());
        for (&before, &after) in vals.iter().zip(clipped.data().iter()) {
            if (0.0..=1.0).contains(&before) {
                assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn clip_rejects_non_finite() {
        let x = batch(&[f32::INFINITY]);
        assert!(clip_to_box(&x).is_err());
    }

    #[test]
    fn project_zero_perturbation_is_identity() {
        let x = ImageBatch::new(batch(&[0.1, 0.6, 0.9])).unwrap();
        let p = project_linf(x.data(), &x, 0.25).unwrap();
        assert_eq!(p.data(), x.data());
    }

    #[test]
    fn project_degenerate_ball_returns_original() {
        let orig = ImageBatch::new(batch(&[0.3, 0.7])).unwrap();
        let adv = batch(&[0.9, 0.1]);
        let p = project_linf(&adv, &orig, 0.0).unwrap();
        assert_eq!(p.data(), orig.data());
    }

    // Single pixel: orig 0.5, adv 0.9, eps 0.1 -> 0.6 (interval clamp by hand).
    #[test]
    fn project_clamps_to_ball_boundary() {
        let orig = ImageBatch::new(batch(&[0.5])).unwrap();
        let adv = batch(&[0.9]);
        let p = project_linf(&adv, &orig, 0.1).unwrap();
        assert!((p.data()[[0, 0, 0, 0]] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn project_shape_mismatch_errors() {
        let orig = ImageBatch::new(batch(&[0.5])).unwrap();
        let adv = batch(&[0.5, 0.5]);
        assert!(project_linf(&adv, &orig, 0.1).is_err());
    }

    #[test]
    fn project_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let orig_vals: Vec<f32> = (0..128).map(|_| rng.random_range(0.0..1.0f32)).collect();
        let adv_vals: Vec<f32> = (0..128).map(|_| rng.random_range(-0.3..1.3f32)).collect();
        let orig =
            ImageBatch::new(Array4::from_shape_vec((2, 1, 8, 8), orig_vals).unwrap()).unwrap();
        let adv = Array4::from_shape_vec((2, 1, 8, 8), adv_vals).unwrap();
        let once = project_linf(&adv, &orig, 0.05).unwrap();
        let twice = project_linf(once.data(), &orig, 0.05).unwrap();
        assert_eq!(once.data(), twice.data());
    }
}
