//! DeepFool: iterative linearization toward the nearest decision boundary.
//!
//! Label-free — the attack pushes the input out of the region of the
//! classifier's *own* original prediction. Each iteration linearizes every
//! other class boundary, steps to the closest one, and stops once the
//! prediction flips. The final perturbation is scaled by `1 + overshoot`
//! and box-clipped.

use ndarray::{Array2, Array4};

use super::{AttackConfig, AttackKind, AttackResult};
use crate::core::{clip_to_box_raw, predictions, Classifier, ImageBatch};
use crate::error::{AdvError, Result};

pub fn deepfool(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if cfg.kind != AttackKind::DeepFool {
        return Err(AdvError::Config(format!("deepfool called with kind {}", cfg.kind)));
    }
    cfg.validate()?;
    let x0 = x.data();
    let n = x0.dim().0;
    let k_classes = classifier.num_classes();

    let pred0 = predictions(&classifier.logits(x));
    let mut cur = x0.clone();
    let mut iters = vec![0u32; n];
    let mut active: Vec<usize> = (0..n).collect();

    for it in 0..cfg.deepfool_max_iter {
        if active.is_empty() {
            break;
        }
        // work on the still-active subset only
        let sub = cur.select(ndarray::Axis(0), &active);
        let sub_batch = ImageBatch::new(sub.clone())
            .map_err(|e| AdvError::Numeric(format!("deepfool iterate invalid: {e}")))?;
        let logits = classifier.logits(&sub_batch);

        // drop images whose prediction already flipped
        let preds = predictions(&logits);
        let mut still = Vec::new();
        let mut flipped_now = Vec::new();
        for (row, &img) in active.iter().enumerate() {
            if preds[row] != pred0[img] {
                flipped_now.push(img);
            } else {
                still.push((row, img));
            }
        }
        for &img in &flipped_now {
            iters[img] = it as u32;
        }
        if still.is_empty() {
            active.clear();
            break;
        }

        // per-class input gradients for the active rows
        let rows = still.len();
        let mut grads: Vec<Array4<f32>> = Vec::with_capacity(k_classes);
        for k in 0..k_classes {
            let mut upstream = Array2::zeros((active.len(), k_classes));
            for (row, _) in &still {
                upstream[[*row, k]] = 1.0;
            }
            grads.push(classifier.logits_vjp(&sub_batch, &upstream));
        }

        let mut next_active = Vec::with_capacity(rows);
        for &(row, img) in &still {
            let p = pred0[img] as usize;
            let g_pred = grads[p].slice(ndarray::s![row, .., .., ..]);
            let z_pred = logits[[row, p]];
            // closest linearized boundary among the other classes
            let mut best: Option<(f64, usize)> = None;
            for k in 0..k_classes {
                if k == p {
                    continue;
                }
                let g_k = grads[k].slice(ndarray::s![row, .., .., ..]);
                let mut w_norm_sq = 0.0f64;
                for (&a, &b) in g_k.iter().zip(g_pred.iter()) {
                    let d = a as f64 - b as f64;
                    w_norm_sq += d * d;
                }
                if w_norm_sq == 0.0 {
                    // degenerate boundary, skip this candidate class
                    continue;
                }
                let f_diff = (logits[[row, k]] - z_pred) as f64;
                let ratio = f_diff.abs() / w_norm_sq.sqrt();
                if best.map_or(true, |(r, _)| ratio < r) {
                    best = Some((ratio, k));
                }
            }
            let Some((_, k_star)) = best else {
                // all boundaries degenerate (e.g. constant classifier):
                // leave the image at its current iterate, unfooled
                iters[img] = it as u32;
                continue;
            };
            let g_k = grads[k_star].slice(ndarray::s![row, .., .., ..]);
            let f_diff = (logits[[row, k_star]] - z_pred) as f64;
            let mut w_norm_sq = 0.0f64;
            for (&a, &b) in g_k.iter().zip(g_pred.iter()) {
                let d = a as f64 - b as f64;
                w_norm_sq += d * d;
            }
            // the 1e-4 nudge carries the iterate across the boundary instead
            // of landing on it, as in the method's reference implementation
            let scale = ((f_diff.abs() + 1e-4) / w_norm_sq) as f32;
            let mut view = cur.slice_mut(ndarray::s![img, .., .., ..]);
            for ((v, &a), &b) in view.iter_mut().zip(g_k.iter()).zip(g_pred.iter()) {
                *v = (*v + scale * (a - b)).clamp(0.0, 1.0);
            }
            iters[img] = (it + 1) as u32;
            next_active.push(img);
        }
        active = next_active;
    }

    // overshoot relative to the clean input, then box clip
    let overshoot = 1.0 + cfg.deepfool_overshoot;
    let mut adv = x0.clone();
    ndarray::Zip::from(&mut adv).and(&cur).for_each(|a, &c| {
        *a += overshoot * (c - *a);
    });
    let adversarial = ImageBatch::new(clip_to_box_raw(&adv))?;
    let final_preds = predictions(&classifier.logits(&adversarial));
    let success: Vec<bool> =
        final_preds.iter().zip(pred0.iter()).map(|(a, b)| a != b).collect();
    Ok(AttackResult { adversarial, success, iterations_used: iters })
}
