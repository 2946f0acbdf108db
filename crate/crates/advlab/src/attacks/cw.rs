//! Carlini & Wagner L2 attack.
//!
//! Minimizes `‖δ‖₂² + c · f(x + δ)` where `f` is the margin loss
//! `max(z_true − max_{k≠true} z_k, −κ)`. The box constraint is kept by a
//! smooth change of variables: the optimizer works on `w` with
//! `adv = (tanh(w) + 1) / 2`, which maps onto `(0, 1)`. Optimization is
//! adaptive-moment gradient descent; the returned perturbation is the
//! smallest-norm misclassified iterate, or the final iterate when no
//! iterate misclassified.

use ndarray::{Array2, Array4, Zip};

use super::{AttackConfig, AttackKind, AttackResult};
use crate::core::{Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};
use crate::nn::Adam;

/// Per-image squared L2 distance between two batches.
fn l2_sq_per_image(a: &Array4<f32>, b: &Array4<f32>) -> Vec<f64> {
    let n = a.dim().0;
    (0..n)
        .map(|i| {
            a.slice(ndarray::s![i, .., .., ..])
                .iter()
                .zip(b.slice(ndarray::s![i, .., .., ..]).iter())
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum()
        })
        .collect()
}

/// Margin `z_true − max_{k≠true} z_k` and the runner-up index, per image.
fn margins(logits: &Array2<f32>, y: &LabelBatch) -> Vec<(f32, usize)> {
    logits
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let t = y.labels()[i] as usize;
            let mut best_other = f32::NEG_INFINITY;
            let mut best_k = usize::MAX;
            for (k, &v) in row.iter().enumerate() {
                if k != t && v > best_other {
                    best_other = v;
                    best_k = k;
                }
            }
            (row[t] - best_other, best_k)
        })
        .collect()
}

pub fn cw_l2(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if cfg.kind != AttackKind::Cw {
        return Err(AdvError::Config(format!("cw_l2 called with kind {}", cfg.kind)));
    }
    cfg.validate()?;
    let x0 = x.data();
    let n = x0.dim().0;
    let kappa = cfg.cw_confidence;
    let c = cfg.cw_constant;

    // w = atanh(2x - 1), pulled slightly inside the open interval
    let squeeze = 1.0 - 1e-6f32;
    let mut w = x0.mapv(|v| ((2.0 * v - 1.0) * squeeze).atanh());

    let mut best_adv = x0.clone();
    let mut best_norm = vec![f64::INFINITY; n];
    let mut opt = Adam::new(cfg.cw_learning_rate, 0.9, 0.999);

    let record_best =
        |adv: &Array4<f32>, flips: &[bool], best_adv: &mut Array4<f32>, best_norm: &mut [f64]| {
            let norms = l2_sq_per_image(adv, x0);
            for i in 0..n {
                if flips[i] && norms[i] < best_norm[i] {
                    best_norm[i] = norms[i];
                    best_adv
                        .slice_mut(ndarray::s![i, .., .., ..])
                        .assign(&adv.slice(ndarray::s![i, .., .., ..]));
                }
            }
        };

    for _ in 0..cfg.cw_steps {
        let adv = w.mapv(|v| (v.tanh() + 1.0) * 0.5);
        let batch = ImageBatch::new(adv.clone())
            .map_err(|e| AdvError::Numeric(format!("cw iterate invalid: {e}")))?;
        let logits = classifier.logits(&batch);
        let flips = super::misclassified_mask(&logits, y.labels().as_slice().unwrap());
        record_best(&adv, &flips, &mut best_adv, &mut best_norm);

        // d(c * f)/dlogits: active while margin > -kappa
        let mg = margins(&logits, y);
        let mut dlogits = Array2::zeros(logits.dim());
        for (i, &(m, runner_up)) in mg.iter().enumerate() {
            if m > -kappa && runner_up != usize::MAX {
                dlogits[[i, y.labels()[i] as usize]] = c;
                dlogits[[i, runner_up]] = -c;
            }
        }
        let g_margin = classifier.logits_vjp(&batch, &dlogits);
        // d‖δ‖² + margin term, chained through adv = (tanh(w)+1)/2
        let mut gw = Array4::zeros(w.dim());
        Zip::from(&mut gw)
            .and(&adv)
            .and(x0)
            .and(&g_margin)
            .and(&w)
            .for_each(|g, &a, &o, &gm, &wv| {
                let dadv = 2.0 * (a - o) + gm;
                let t = wv.tanh();
                *g = dadv * (1.0 - t * t) * 0.5;
            });
        let mut w_slice = [w.as_slice_mut().unwrap()];
        let g_slice = [gw.as_slice().unwrap()];
        let mut params: Vec<&mut [f32]> = w_slice.iter_mut().map(|s| &mut s[..]).collect();
        let grads: Vec<&[f32]> = g_slice.to_vec();
        opt.step(&mut params, &grads);
    }

    // score the final iterate too
    let adv = w.mapv(|v| (v.tanh() + 1.0) * 0.5);
    let batch = ImageBatch::new(adv.clone())
        .map_err(|e| AdvError::Numeric(format!("cw final iterate invalid: {e}")))?;
    let logits = classifier.logits(&batch);
    let flips = super::misclassified_mask(&logits, y.labels().as_slice().unwrap());
    record_best(&adv, &flips, &mut best_adv, &mut best_norm);

    let success: Vec<bool> = best_norm.iter().map(|v| v.is_finite()).collect();
    // images never fooled return the final iterate
    for i in 0..n {
        if !success[i] {
            best_adv
                .slice_mut(ndarray::s![i, .., .., ..])
                .assign(&adv.slice(ndarray::s![i, .., .., ..]));
        }
    }
    Ok(AttackResult {
        adversarial: ImageBatch::new(best_adv)?,
        success,
        iterations_used: vec![cfg.cw_steps as u32; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::LinearSoftmax;
    use ndarray::{array, Array1, Array4};

    fn batch1(vals: &[f32]) -> ImageBatch {
        ImageBatch::new(Array4::from_shape_vec((1, 1, 1, vals.len()), vals.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_constant_returns_input() {
        let model = LinearSoftmax::new(array![[1.0, -1.0], [-1.0, 1.0]], Array1::zeros(2), (1, 1, 2))
            .unwrap();
        let x = batch1(&[0.3, 0.6]);
        let y = LabelBatch::new(array![0u32], 2).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::Cw);
        cfg.cw_constant = 0.0;
        cfg.cw_steps = 30;
        let r = cw_l2(&model, &x, &y, &cfg).unwrap();
        let max_diff = r
            .adversarial
            .data()
            .iter()
            .zip(x.data().iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff < 1e-4, "pure-norm objective moved the input by {max_diff}");
    }

    #[test]
    fn already_misclassified_input_keeps_zero_perturbation() {
        // label 1 but the model prefers class 0 at x
        let model = LinearSoftmax::new(array![[2.0, 0.0], [0.0, 0.0]], Array1::zeros(2), (1, 1, 2))
            .unwrap();
        let x = batch1(&[0.8, 0.1]);
        let y = LabelBatch::new(array![1u32], 2).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::Cw);
        cfg.cw_steps = 20;
        cfg.cw_confidence = 0.0;
        let r = cw_l2(&model, &x, &y, &cfg).unwrap();
        assert!(r.success[0]);
        let delta: f32 = r
            .adversarial
            .data()
            .iter()
            .zip(x.data().iter())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        assert!(delta < 1e-5, "perturbation should be zero, got L1 {delta}");
    }

    // Two-pixel linear model: the smallest flip is the projection onto the
    // decision hyperplane; cw must land within 10% of that distance.
    #[test]
    fn linear_model_recovers_hyperplane_distance() {
        let w = array![[1.5, -0.7], [-1.5, 0.7]];
        let model = LinearSoftmax::new(w, Array1::zeros(2), (1, 1, 2)).unwrap();
        let x = batch1(&[0.7, 0.4]);
        let y = LabelBatch::new(array![0u32], 2).unwrap();
        // logit gap g(x) = (w0 - w1) . x; distance = |g| / ||w0 - w1||
        let gap = 3.0 * 0.7 - 1.4 * 0.4;
        let dist = gap / (3.0f64.powi(2) as f32 + 1.4 * 1.4).sqrt();
        let mut cfg = AttackConfig::new(AttackKind::Cw);
        cfg.cw_steps = 400;
        cfg.cw_learning_rate = 0.02;
        cfg.cw_constant = 2.0;
        let r = cw_l2(&model, &x, &y, &cfg).unwrap();
        assert!(r.success[0], "attack should fool a linear model");
        let delta_norm = r
            .adversarial
            .data()
            .iter()
            .zip(x.data().iter())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let rel = (delta_norm - dist as f64).abs() / dist as f64;
        assert!(rel < 0.10, "‖δ‖ = {delta_norm}, analytic distance {dist}, rel err {rel}");
    }
}
