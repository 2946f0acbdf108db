//! Finite-difference validation of classifier input gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};

/// Central-difference step. Probe pixels are restricted to values where
/// `x ± h` stays inside `[0,1]` so the probe batch remains a valid image.
const FD_STEP: f32 = 1e-3;

/// Compares the classifier's analytic input gradient against central finite
/// differences of its loss at `probes` randomly sampled pixels.
///
/// Returns the maximum over probes of
/// `|analytic - fd| / (|analytic| + c)` where `c` is a small constant tied
/// to the gradient scale (`1e-2 * max|analytic| + 1e-12`). Deterministic
/// given `seed`.
///
/// The finite difference is taken through [`Classifier::loss_f64`] using the
/// exactly-achieved `f32` step, so implementations with a real `f64` path
/// resolve well below the stated tolerances.
pub fn gradient_check(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if probes < 1 {
        return Err(AdvError::Config("gradient_check: probes must be >= 1".into()));
    }
    if x.len() != y.len() {
        return Err(AdvError::Shape(format!(
            "gradient_check: batch size {} != label count {}",
            x.len(),
            y.len()
        )));
    }

    let analytic = classifier.input_gradient(x, y);
    let max_abs = analytic.iter().fold(0.0f64, |a, &g| a.max(g.abs() as f64));
    let denom_floor = 1e-2 * max_abs + 1e-12;

    let (n, c, h, w) = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let attempt_cap = probes.saturating_mul(1000).max(1000);

    while accepted < probes && attempts < attempt_cap {
        attempts += 1;
        let idx = (
            rng.random_range(0..n),
            rng.random_range(0..c),
            rng.random_range(0..h),
            rng.random_range(0..w),
        );
        let v = x.data()[[idx.0, idx.1, idx.2, idx.3]];
        // Stay inside the box so perturbed probes are still valid images.
        if v - FD_STEP < 0.0 || v + FD_STEP > 1.0 {
            continue;
        }
        accepted += 1;

        let sample = x.slice_range(idx.0, idx.0 + 1);
        let label = y.slice_range(idx.0, idx.0 + 1);
        let probe = |value: f32| -> Result<f64> {
            let mut data = sample.data().clone();
            data[[0, idx.1, idx.2, idx.3]] = value;
            let batch = ImageBatch::new(data)?;
            Ok(classifier.loss_f64(&batch, &label)[0])
        };
        let hi = v + FD_STEP;
        let lo = v - FD_STEP;
        let loss_hi = probe(hi)?;
        let loss_lo = probe(lo)?;
        // Divide by the step actually realized after f32 rounding.
        let achieved = hi as f64 - lo as f64;
        let fd = (loss_hi - loss_lo) / achieved;

        let a = analytic[[idx.0, idx.1, idx.2, idx.3]] as f64;
        let rel = (a - fd).abs() / (a.abs() + denom_floor);
        max_rel = max_rel.max(rel);
    }

    if accepted == 0 {
        return Err(AdvError::Data(
            "gradient_check: no probe pixel found with x ± h inside [0,1]".into(),
        ));
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::LinearSoftmax;
    use ndarray::{Array1, Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, shape: (usize, usize, usize), seed: u64) -> (ImageBatch, LabelBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = shape;
        let data: Vec<f32> = (0..n * c * h * w).map(|_| rng.random_range(0.05..0.95)).collect();
        let x = ImageBatch::new(Array4::from_shape_vec((n, c, h, w), data).unwrap()).unwrap();
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..3u32)).collect();
        let y = LabelBatch::new(Array1::from_vec(labels), 3).unwrap();
        (x, y)
    }

    // Analytic gradient of linear-softmax cross-entropy is exact.
    #[test]
    fn linear_classifier_below_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Array2::from_shape_fn((3, 12), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-0.2..0.2));
        let model = LinearSoftmax::new(w, b, (3, 2, 2)).unwrap();
        let (x, y) = random_batch(4, (3, 2, 2), 4);
        let err = gradient_check(&model, &x, &y, 50, 99).unwrap();
        assert!(err <= 1e-6, "relative error {err} above 1e-6");
    }

    // Constant classifier: analytic gradient 0, finite difference 0.
    #[test]
    fn constant_classifier_is_exact() {
        let model =
            LinearSoftmax::new(Array2::zeros((3, 12)), Array1::zeros(3), (3, 2, 2)).unwrap();
        let (x, y) = random_batch(2, (3, 2, 2), 5);
        let err = gradient_check(&model, &x, &y, 20, 7).unwrap();
        assert!(err < 1e-12, "constant function should have exact gradients, got {err}");
    }

    #[test]
    fn zero_probes_is_a_config_error() {
        let model =
            LinearSoftmax::new(Array2::zeros((3, 12)), Array1::zeros(3), (3, 2, 2)).unwrap();
        let (x, y) = random_batch(1, (3, 2, 2), 6);
        assert!(gradient_check(&model, &x, &y, 0, 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Array2::from_shape_fn((3, 12), |_| rng.random_range(-1.0..1.0));
        let model = LinearSoftmax::new(w, Array1::zeros(3), (3, 2, 2)).unwrap();
        let (x, y) = random_batch(3, (3, 2, 2), 9);
        let a = gradient_check(&model, &x, &y, 25, 42).unwrap();
        let b = gradient_check(&model, &x, &y, 25, 42).unwrap();
        assert_eq!(a, b);
    }
}
