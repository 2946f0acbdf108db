//! Square attack: score-based random search with square patches.
//!
//! Gradient-free. Each proposal overwrites a random square patch with
//! ε-saturated pixels (per-channel sign), clipped to the box; a proposal is
//! accepted only if it strictly decreases the margin loss
//! `z_true − max_{k≠true} z_k`. The patch side shrinks geometrically over
//! the query budget. Per-image randomness comes from `(seed, image index)`.

use ndarray::{Array3, Array4};
use rand::Rng;

use super::{AttackConfig, AttackKind, AttackResult};
use crate::core::{predictions, Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};
use crate::nn::rng_stream;

/// Patch side for proposal `t` of `budget`: starts at half the image side
/// and halves in five geometric phases down to single pixels.
fn patch_side(t: usize, budget: usize, img_side: usize) -> usize {
    let phase = if budget == 0 { 0 } else { (5 * t) / budget };
    let side = (img_side / 2) >> phase;
    side.max(1)
}

fn margin(logits_row: ndarray::ArrayView1<f32>, label: usize) -> f32 {
    let mut best_other = f32::NEG_INFINITY;
    for (k, &v) in logits_row.iter().enumerate() {
        if k != label && v > best_other {
            best_other = v;
        }
    }
    logits_row[label] - best_other
}

pub fn square_attack(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    Ok(run(classifier, x, y, cfg, None)?)
}

/// Same attack, additionally recording the accepted margin values per image
/// (used to verify acceptance monotonicity).
pub fn square_attack_with_trace(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<(AttackResult, Vec<Vec<f32>>)> {
    let mut traces = vec![Vec::new(); x.len()];
    let result = run(classifier, x, y, cfg, Some(&mut traces))?;
    Ok((result, traces))
}

fn run(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
    mut traces: Option<&mut Vec<Vec<f32>>>,
) -> Result<AttackResult> {
    if cfg.kind != AttackKind::Square && cfg.kind != AttackKind::AutoComposite {
        return Err(AdvError::Config(format!("square_attack called with kind {}", cfg.kind)));
    }
    cfg.validate()?;
    let eps = cfg.budget.epsilon;
    let budget = cfg.iterations;
    let x0 = x.data();
    let (n, c, h, w) = x0.dim();

    let mut cur = x0.clone();
    let logits0 = classifier.logits(x);
    let mut cur_margin: Vec<f32> = (0..n)
        .map(|i| margin(logits0.row(i), y.labels()[i] as usize))
        .collect();
    let mut queries = vec![0u32; n];
    let mut rngs: Vec<_> = (0..n).map(|i| rng_stream(cfg.seed, i as u64)).collect();

    for t in 0..budget {
        // propose for every image whose margin is still non-negative
        let active: Vec<usize> = (0..n).filter(|&i| cur_margin[i] >= 0.0).collect();
        if active.is_empty() {
            break;
        }
        let side = patch_side(t, budget, h.min(w));
        let mut proposals: Array4<f32> = cur.select(ndarray::Axis(0), &active);
        let mut patches: Vec<Array3<f32>> = Vec::with_capacity(active.len());
        for (row, &img) in active.iter().enumerate() {
            let rng = &mut rngs[img];
            let oy = rng.random_range(0..=(h - side));
            let ox = rng.random_range(0..=(w - side));
            let signs: Vec<f32> = (0..c)
                .map(|_| if rng.random_range(0.0..1.0f32) < 0.5 { -eps } else { eps })
                .collect();
            let before = proposals
                .slice(ndarray::s![row, .., oy..oy + side, ox..ox + side])
                .to_owned();
            patches.push(before);
            let orig = x0.slice(ndarray::s![img, .., oy..oy + side, ox..ox + side]);
            let mut view =
                proposals.slice_mut(ndarray::s![row, .., oy..oy + side, ox..ox + side]);
            for ch in 0..c {
                let sgn = signs[ch];
                let mut plane = view.slice_mut(ndarray::s![ch, .., ..]);
                let orig_plane = orig.slice(ndarray::s![ch, .., ..]);
                ndarray::Zip::from(&mut plane).and(&orig_plane).for_each(|p, &o| {
                    *p = (o + sgn).clamp(0.0, 1.0);
                });
            }
            queries[img] += 1;
        }
        let batch = ImageBatch::new(proposals.clone())?;
        let logits = classifier.logits(&batch);
        for (row, &img) in active.iter().enumerate() {
            let new_margin = margin(logits.row(row), y.labels()[img] as usize);
            if new_margin < cur_margin[img] {
                cur.slice_mut(ndarray::s![img, .., .., ..])
                    .assign(&proposals.slice(ndarray::s![row, .., .., ..]));
                cur_margin[img] = new_margin;
                if let Some(tr) = traces.as_deref_mut() {
                    tr[img].push(new_margin);
                }
            }
        }
    }

    let adversarial = ImageBatch::new(cur)?;
    let preds = predictions(&classifier.logits(&adversarial));
    let success: Vec<bool> =
        preds.iter().zip(y.labels().iter()).map(|(p, t)| p != t).collect();
    Ok(AttackResult { adversarial, success, iterations_used: queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::LinearSoftmax;
    use ndarray::{Array1, Array2, Array4};
    use rand::Rng;

    fn toy() -> (LinearSoftmax, ImageBatch, LabelBatch) {
        let mut rng = rng_stream(31, 0);
        let w = Array2::from_shape_fn((3, 36), |_| rng.random_range(-1.0..1.0));
        let model = LinearSoftmax::new(w, Array1::zeros(3), (1, 6, 6)).unwrap();
        let x = ImageBatch::new(Array4::from_shape_fn((4, 1, 6, 6), |_| {
            rng.random_range(0.2..0.8f32)
        }))
        .unwrap();
        let y = LabelBatch::new(Array1::from_vec(vec![0, 1, 2, 0]), 3).unwrap();
        (model, x, y)
    }

    #[test]
    fn zero_epsilon_changes_nothing_and_accepts_nothing() {
        let (model, x, y) = toy();
        let mut cfg = AttackConfig::new(AttackKind::Square).with_epsilon(0.0);
        cfg.iterations = 50;
        let (r, traces) = square_attack_with_trace(&model, &x, &y, &cfg).unwrap();
        assert_eq!(r.adversarial.data(), x.data());
        assert!(traces.iter().all(|t| t.is_empty()), "no proposal may be accepted at eps 0");
    }

    #[test]
    fn zero_budget_returns_input() {
        let (model, x, y) = toy();
        let mut cfg = AttackConfig::new(AttackKind::Square).with_epsilon(0.2);
        cfg.iterations = 0;
        let r = square_attack(&model, &x, &y, &cfg).unwrap();
        assert_eq!(r.adversarial.data(), x.data());
        assert!(r.iterations_used.iter().all(|&q| q == 0));
    }

    #[test]
    fn accepted_margins_are_strictly_decreasing() {
        let (model, x, y) = toy();
        let mut cfg = AttackConfig::new(AttackKind::Square).with_epsilon(0.15).with_seed(4);
        cfg.iterations = 200;
        let (_, traces) = square_attack_with_trace(&model, &x, &y, &cfg).unwrap();
        let mut saw_accepts = false;
        for trace in traces {
            saw_accepts |= !trace.is_empty();
            for pair in trace.windows(2) {
                assert!(pair[1] < pair[0], "margin must strictly decrease: {pair:?}");
            }
        }
        assert!(saw_accepts, "expected at least one accepted proposal");
    }

    #[test]
    fn respects_epsilon_ball() {
        let (model, x, y) = toy();
        let mut cfg = AttackConfig::new(AttackKind::Square).with_epsilon(0.1).with_seed(8);
        cfg.iterations = 150;
        let r = square_attack(&model, &x, &y, &cfg).unwrap();
        for (&a, &o) in r.adversarial.data().iter().zip(x.data().iter()) {
            assert!((a - o).abs() <= 0.1 + 1e-6);
        }
    }

    #[test]
    fn patch_side_shrinks_geometrically() {
        let sides: Vec<usize> = (0..100).map(|t| patch_side(t, 100, 28)).collect();
        assert_eq!(sides[0], 14);
        assert!(sides.windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(*sides.last().unwrap(), 1);
    }
}
