//! Accuracy, PSNR, MAE, and the generalizability score.

use ndarray::Array1;

use crate::core::{predictions, Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};

/// Images per forward chunk during evaluation.
const EVAL_CHUNK: usize = 256;

/// Argmax predictions over a batch, computed in chunks.
pub fn predict_all(classifier: &dyn Classifier, x: &ImageBatch) -> Array1<u32> {
    let n = x.len();
    let mut out = Array1::zeros(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = x.slice_range(start, end);
        let preds = predictions(&classifier.logits(&chunk));
        out.slice_mut(ndarray::s![start..end]).assign(&preds);
        start = end;
    }
    out
}

/// Classification accuracy in percent.
pub fn accuracy(classifier: &dyn Classifier, x: &ImageBatch, y: &LabelBatch) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AdvError::Shape(format!(
            "accuracy: {} images vs {} labels",
            x.len(),
            y.len()
        )));
    }
    let preds = predict_all(classifier, x);
    let correct = preds.iter().zip(y.labels()).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / y.len() as f64)
}

/// Batch-mean PSNR with the zero-MSE sentinel policy: identical images have
/// undefined (infinite) PSNR and are excluded from the mean, with a count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrStats {
    /// Mean over images with finite PSNR; `None` when every pair was
    /// identical.
    pub mean_db: Option<f64>,
    pub finite_count: usize,
    /// Images excluded because their MSE was exactly zero.
    pub infinite_count: usize,
}

/// Per-image `10 log10(1 / MSE)` (MAX = 1 on the `[0,1]` scale), averaged
/// over the batch. Symmetric in its arguments.
pub fn psnr(a: &ImageBatch, b: &ImageBatch) -> Result<PsnrStats> {
    if a.dim() != b.dim() {
        return Err(AdvError::Shape("psnr: shape mismatch".into()));
    }
    let (n, c, h, w) = a.dim();
    let per_image = c * h * w;
    let mut sum_db = 0.0f64;
    let mut finite = 0usize;
    let mut infinite = 0usize;
    for i in 0..n {
        let pa = a.data().slice(ndarray::s![i, .., .., ..]);
        let pb = b.data().slice(ndarray::s![i, .., .., ..]);
        let mse: f64 = pa
            .iter()
            .zip(pb.iter())
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            / per_image as f64;
        if mse == 0.0 {
            infinite += 1;
        } else {
            sum_db += 10.0 * (1.0 / mse).log10();
            finite += 1;
        }
    }
    Ok(PsnrStats {
        mean_db: (finite > 0).then(|| sum_db / finite as f64),
        finite_count: finite,
        infinite_count: infinite,
    })
}

/// Mean absolute element difference over the whole batch. Symmetric.
pub fn mae(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(AdvError::Shape("mae: shape mismatch".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Generalizability `G = 1 - acc_on_B / acc_on_A`: how much a defense
/// trained for attack A loses under attack B. Lower is better; negative
/// means B is handled better than the trained attack. Undefined when
/// `acc_on_A` is zero.
pub fn generalizability(acc_on_b: f64, acc_on_a: f64) -> Option<f64> {
    if acc_on_a <= 0.0 {
        return None;
    }
    Some(1.0 - acc_on_b / acc_on_a)
}
