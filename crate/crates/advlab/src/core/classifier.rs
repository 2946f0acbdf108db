//! The differentiable-classifier contract and a linear reference model.

use ndarray::{Array1, Array2, Array4};

use crate::core::{ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};

/// Contract every attack target must satisfy: a frozen, differentiable
/// classifier exposing logits and input gradients.
///
/// The primitive beyond plain inference is [`Classifier::logits_vjp`], the
/// vector-Jacobian product of the logits with respect to the input. Loss and
/// loss-gradient methods are provided on top of it (per-sample cross-entropy
/// on softmax logits, natural log).
///
/// Implementations must be safe for concurrent read-only use; all methods
/// take `&self` and weights are frozen.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    /// `(C, H, W)` of a single input image.
    fn input_shape(&self) -> (usize, usize, usize);

    /// Raw class scores, shape `(N, num_classes)`. Finite for any valid batch.
    fn logits(&self, x: &ImageBatch) -> Array2<f32>;

    /// Gradient of `sum(upstream * logits(x))` with respect to `x`.
    ///
    /// `upstream` has shape `(N, num_classes)`; the result has the shape of
    /// the input batch. Rows are independent: sample `n` of the output only
    /// depends on row `n` of `upstream`.
    fn logits_vjp(&self, x: &ImageBatch, upstream: &Array2<f32>) -> Array4<f32>;

    /// Per-sample cross-entropy loss, shape `(N,)`.
    fn loss(&self, x: &ImageBatch, y: &LabelBatch) -> Array1<f32> {
        let logits = self.logits(x);
        cross_entropy_per_sample(&logits, y).mapv(|v| v as f32)
    }

    /// Per-sample cross-entropy evaluated at higher precision, used by
    /// finite-difference self-checks.
    ///
    /// The default recomputes the loss from `f32` logits; implementations
    /// with an exact `f64` forward path should override it so central
    /// differences resolve below the `f32` noise floor.
    fn loss_f64(&self, x: &ImageBatch, y: &LabelBatch) -> Array1<f64> {
        let logits = self.logits(x);
        cross_entropy_per_sample(&logits, y)
    }

    /// Gradient of the summed per-sample cross-entropy with respect to the
    /// input, shape `(N, C, H, W)`.
    fn input_gradient(&self, x: &ImageBatch, y: &LabelBatch) -> Array4<f32> {
        let logits = self.logits(x);
        let upstream = softmax_minus_onehot(&logits, y);
        self.logits_vjp(x, &upstream)
    }
}

/// Argmax predictions from logits; ties break toward the lower class index.
pub fn predictions(logits: &Array2<f32>) -> Array1<u32> {
    let mut out = Array1::zeros(logits.nrows());
    for (n, row) in logits.rows().into_iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for (k, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        out[n] = best as u32;
    }
    out
}

/// Numerically stable per-sample cross-entropy from `f32` logits, in `f64`.
pub(crate) fn cross_entropy_per_sample(logits: &Array2<f32>, y: &LabelBatch) -> Array1<f64> {
    debug_assert_eq!(logits.nrows(), y.len());
    let mut out = Array1::zeros(logits.nrows());
    for (n, row) in logits.rows().into_iter().enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
        let lse: f64 = m + row.iter().map(|&v| ((v as f64) - m).exp()).sum::<f64>().ln();
        out[n] = lse - logits[[n, y.labels()[n] as usize]] as f64;
    }
    out
}

/// Upstream gradient of summed cross-entropy w.r.t. logits: softmax - onehot.
pub(crate) fn softmax_minus_onehot(logits: &Array2<f32>, y: &LabelBatch) -> Array2<f32> {
    let mut out = Array2::zeros(logits.dim());
    for (n, row) in logits.rows().into_iter().enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| ((v as f64) - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (k, e) in exps.iter().enumerate() {
            out[[n, k]] = (e / z) as f32;
        }
        out[[n, y.labels()[n] as usize]] -= 1.0;
    }
    out
}

/// A linear-softmax classifier with exact `f64` internals.
///
/// Logits are `W x + b` over the flattened image. Used as an analytically
/// tractable attack target in tests and self-checks.
#[derive(Debug, Clone)]
pub struct LinearSoftmax {
    weights: Array2<f64>,
    bias: Array1<f64>,
    input_shape: (usize, usize, usize),
}

impl LinearSoftmax {
    /// `weights` has shape `(num_classes, C*H*W)`.
    pub fn new(
        weights: Array2<f64>,
        bias: Array1<f64>,
        input_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let (c, h, w) = input_shape;
        if weights.ncols() != c * h * w {
            return Err(AdvError::Shape(format!(
                "weight columns {} != flattened input size {}",
                weights.ncols(),
                c * h * w
            )));
        }
        if weights.nrows() != bias.len() {
            return Err(AdvError::Shape(format!(
                "weight rows {} != bias length {}",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias, input_shape })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    fn logits_f64(&self, x: &ImageBatch) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        let flat = x.data().to_shape((n, c * h * w)).unwrap().mapv(|v| v as f64);
        flat.dot(&self.weights.t()) + &self.bias
    }
}

impl Classifier for LinearSoftmax {
    fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    fn logits(&self, x: &ImageBatch) -> Array2<f32> {
        self.logits_f64(x).mapv(|v| v as f32)
    }

    fn logits_vjp(&self, x: &ImageBatch, upstream: &Array2<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let up = upstream.mapv(|v| v as f64);
        let flat = up.dot(&self.weights);
        flat.mapv(|v| v as f32).into_shape_with_order((n, c, h, w)).unwrap()
    }

    fn loss_f64(&self, x: &ImageBatch, y: &LabelBatch) -> Array1<f64> {
        let logits = self.logits_f64(x);
        let mut out = Array1::zeros(logits.nrows());
        for (n, row) in logits.rows().into_iter().enumerate() {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse: f64 = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            out[n] = lse - logits[[n, y.labels()[n] as usize]];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};

    fn tiny_linear() -> LinearSoftmax {
        // 2 classes over a 2-pixel image.
        let w = array![[1.0, -0.5], [-1.0, 0.5]];
        let b = array![0.1, -0.1];
        LinearSoftmax::new(w, b, (1, 1, 2)).unwrap()
    }

    #[test]
    fn linear_logits_match_hand_computation() {
        let m = tiny_linear();
        let x = ImageBatch::new(
            Array4::from_shape_vec((1, 1, 1, 2), vec![0.4, 0.8]).unwrap(),
        )
        .unwrap();
        let z = m.logits(&x);
        assert!((z[[0, 0]] - (0.4 - 0.4 + 0.1)).abs() < 1e-6);
        assert!((z[[0, 1]] - (-0.4 + 0.4 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn predictions_break_ties_low() {
        let logits = array![[1.0f32, 1.0], [0.0, 2.0]];
        let p = predictions(&logits);
        assert_eq!(p, array![0u32, 1]);
    }

    #[test]
    fn softmax_minus_onehot_rows_sum_to_zero() {
        let logits = array![[2.0f32, -1.0, 0.5], [0.0, 0.0, 0.0]];
        let y = LabelBatch::new(array![2u32, 0], 3).unwrap();
        let g = softmax_minus_onehot(&logits, &y);
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-6);
        }
    }
}
