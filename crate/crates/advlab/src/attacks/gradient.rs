//! Gradient-sign attacks: FGSM and the iterative family (BIM, PGD, MI-FGSM).
//!
//! The three iterative attacks share one update line so their documented
//! reduction identities hold bit-for-bit on shared gradients:
//! `pgd(random_start = false) ≡ bim`, `bim(N = 1, α = ε) ≡ fgsm`, and
//! `mi_fgsm(μ = 0)` walks the same iterate sequence as `bim`.

use ndarray::{Array4, Zip};
use rand::Rng;

use super::{misclassified_mask, AttackConfig, AttackKind, AttackResult};
use crate::core::{clip_to_box_raw, project_linf_raw, Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};
use crate::nn::rng_stream;

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One signed step followed by box clipping and the ε-ball projection
/// (order: box, then ball; the projection re-applies the box, which is a
/// no-op at that point). Shared by every iterative L∞ attack.
fn signed_step(
    cur: &Array4<f32>,
    direction: &Array4<f32>,
    alpha: f32,
    orig: &Array4<f32>,
    epsilon: f32,
) -> Array4<f32> {
    let mut stepped = Zip::from(cur)
        .and(direction)
        .map_collect(|&v, &d| v + alpha * sign(d));
    stepped = clip_to_box_raw(&stepped);
    project_linf_raw(&stepped, orig, epsilon)
}

fn finish(
    classifier: &dyn Classifier,
    adv: Array4<f32>,
    y: &LabelBatch,
    iters: u32,
) -> Result<AttackResult> {
    let n = adv.dim().0;
    let adversarial = ImageBatch::new(adv)
        .map_err(|e| AdvError::Numeric(format!("attack produced an invalid image batch: {e}")))?;
    let logits = classifier.logits(&adversarial);
    let success = misclassified_mask(&logits, y.labels().as_slice().unwrap());
    Ok(AttackResult { adversarial, success, iterations_used: vec![iters; n] })
}

/// Single-step attack: `adv = clip(x + ε · sign(∇ₓ J))`.
pub fn fgsm(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let grad = classifier.input_gradient(x, y);
    let eps = cfg.budget.epsilon;
    let adv = clip_to_box_raw(&Zip::from(x.data()).and(&grad).map_collect(|&v, &g| {
        v + eps * sign(g)
    }));
    finish(classifier, adv, y, 1)
}

enum Direction {
    /// sign of the raw gradient (BIM, PGD)
    GradientSign,
    /// sign of the accumulated momentum (MI-FGSM)
    Momentum { decay: f32, state: Array4<f32> },
}

impl Direction {
    fn next(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        match self {
            Direction::GradientSign => grad.clone(),
            Direction::Momentum { decay, state } => {
                let n = grad.dim().0;
                for i in 0..n {
                    let g = grad.slice(ndarray::s![i, .., .., ..]);
                    let l1: f32 = g.iter().map(|v| v.abs()).sum();
                    // zero gradient: keep the previous momentum direction
                    if l1 == 0.0 {
                        continue;
                    }
                    let mut m = state.slice_mut(ndarray::s![i, .., .., ..]);
                    Zip::from(&mut m).and(&g).for_each(|m, &gv| {
                        *m = *decay * *m + gv / l1;
                    });
                }
                state.clone()
            }
        }
    }
}

fn iterative_linf(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
    mut direction: Direction,
) -> Result<AttackResult> {
    cfg.validate()?;
    let orig = x.data();
    let eps = cfg.budget.epsilon;

    let mut cur = if cfg.random_start && eps > 0.0 {
        let n = orig.dim().0;
        let mut noisy = orig.clone();
        for i in 0..n {
            let mut rng = rng_stream(cfg.seed, i as u64);
            let mut view = noisy.slice_mut(ndarray::s![i, .., .., ..]);
            for v in view.iter_mut() {
                *v += rng.random_range(-eps..eps);
            }
        }
        project_linf_raw(&noisy, orig, eps)
    } else {
        orig.clone()
    };

    for _ in 0..cfg.iterations {
        let batch = ImageBatch::new(cur.clone())
            .map_err(|e| AdvError::Numeric(format!("iterate left the valid image set: {e}")))?;
        let grad = classifier.input_gradient(&batch, y);
        let dir = direction.next(&grad);
        cur = signed_step(&cur, &dir, cfg.step_size, orig, eps);
    }
    finish(classifier, cur, y, cfg.iterations as u32)
}

/// Basic iterative method: repeated FGSM steps with box clipping and
/// ε-projection after every step.
pub fn bim(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if cfg.kind != AttackKind::Bim && cfg.kind != AttackKind::Pgd {
        return Err(AdvError::Config(format!("bim called with kind {}", cfg.kind)));
    }
    iterative_linf(classifier, x, y, cfg, Direction::GradientSign)
}

/// Projected gradient descent: BIM plus an optional uniform random start
/// inside the ε-ball, seeded per image.
pub fn pgd(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    iterative_linf(classifier, x, y, cfg, Direction::GradientSign)
}

/// Momentum-iterative FGSM: the step direction is the sign of an
/// L1-normalized gradient accumulator (normalization per image over all
/// pixels).
pub fn mi_fgsm(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: &LabelBatch,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let momentum = Direction::Momentum {
        decay: cfg.momentum_decay,
        state: Array4::zeros(x.data().dim()),
    };
    iterative_linf(classifier, x, y, cfg, momentum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::LinearSoftmax;
    use ndarray::{array, Array1, Array2};

    fn one_pixel_logistic() -> LinearSoftmax {
        // two-class softmax over one pixel: logit gap = 4x, so sigma(w x)
        // with w = 4 > 0; loss gradient w.r.t. x is negative for label 1.
        LinearSoftmax::new(array![[0.0], [4.0]], Array1::zeros(2), (1, 1, 1)).unwrap()
    }

    fn pixel_batch(v: f32) -> ImageBatch {
        ImageBatch::new(Array4::from_shape_vec((1, 1, 1, 1), vec![v]).unwrap()).unwrap()
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let model = one_pixel_logistic();
        let x = pixel_batch(0.5);
        let y = LabelBatch::new(array![1u32], 2).unwrap();
        let cfg = AttackConfig::new(AttackKind::Fgsm).with_epsilon(0.0);
        let r = fgsm(&model, &x, &y, &cfg).unwrap();
        assert_eq!(r.adversarial.data(), x.data());
    }

    // Closed-form check: for label 1 with positive weight and sigma < 1 the
    // loss gradient w.r.t. x is negative, so FGSM moves x down by epsilon.
    #[test]
    fn fgsm_matches_logistic_closed_form() {
        let model = one_pixel_logistic();
        let x = pixel_batch(0.5);
        let y = LabelBatch::new(array![1u32], 2).unwrap();
        let cfg = AttackConfig::new(AttackKind::Fgsm).with_epsilon(0.1);
        let r = fgsm(&model, &x, &y, &cfg).unwrap();
        assert!((r.adversarial.data()[[0, 0, 0, 0]] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn pgd_without_random_start_is_bit_identical_to_bim() {
        let mut rng = crate::nn::rng_stream(3, 0);
        use rand::Rng;
        let w = Array2::from_shape_fn((3, 16), |_| rng.random_range(-1.0..1.0));
        let model = LinearSoftmax::new(w, Array1::zeros(3), (1, 4, 4)).unwrap();
        let data = Array4::from_shape_fn((5, 1, 4, 4), |_| rng.random_range(0.2..0.8f32));
        let x = ImageBatch::new(data).unwrap();
        let y = LabelBatch::new(Array1::from_vec(vec![0, 1, 2, 0, 1]), 3).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::Pgd).with_epsilon(0.2);
        cfg.random_start = false;
        cfg.iterations = 5;
        let via_pgd = pgd(&model, &x, &y, &cfg).unwrap();
        let mut cfg_bim = cfg.clone();
        cfg_bim.kind = AttackKind::Bim;
        let via_bim = bim(&model, &x, &y, &cfg_bim).unwrap();
        assert_eq!(via_pgd.adversarial.data(), via_bim.adversarial.data());
    }

    #[test]
    fn pgd_seeded_runs_are_identical_and_eps0_is_identity() {
        let mut rng = crate::nn::rng_stream(5, 0);
        use rand::Rng;
        let w = Array2::from_shape_fn((2, 9), |_| rng.random_range(-1.0..1.0));
        let model = LinearSoftmax::new(w, Array1::zeros(2), (1, 3, 3)).unwrap();
        let data = Array4::from_shape_fn((4, 1, 3, 3), |_| rng.random_range(0.2..0.8f32));
        let x = ImageBatch::new(data).unwrap();
        let y = LabelBatch::new(Array1::from_vec(vec![0, 1, 0, 1]), 2).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::Pgd).with_epsilon(0.15).with_seed(9);
        cfg.iterations = 3;
        let a = pgd(&model, &x, &y, &cfg).unwrap();
        let b = pgd(&model, &x, &y, &cfg).unwrap();
        assert_eq!(a.adversarial.data(), b.adversarial.data());

        let cfg0 = cfg.with_epsilon(0.0);
        let r = pgd(&model, &x, &y, &cfg0).unwrap();
        assert_eq!(r.adversarial.data(), x.data());
    }

    // Two-iteration hand trace on one pixel with a constant positive
    // gradient: x rises by alpha per step until the epsilon boundary.
    #[test]
    fn mi_fgsm_walks_alpha_steps_to_the_boundary() {
        struct ConstGrad;
        impl Classifier for ConstGrad {
            fn num_classes(&self) -> usize {
                2
            }
            fn input_shape(&self) -> (usize, usize, usize) {
                (1, 1, 1)
            }
            fn logits(&self, x: &ImageBatch) -> Array2<f32> {
                Array2::zeros((x.len(), 2))
            }
            fn logits_vjp(&self, x: &ImageBatch, _up: &Array2<f32>) -> Array4<f32> {
                Array4::ones(x.data().dim())
            }
            fn input_gradient(&self, x: &ImageBatch, _y: &LabelBatch) -> Array4<f32> {
                Array4::ones(x.data().dim())
            }
        }
        let x = pixel_batch(0.5);
        let y = LabelBatch::new(array![0u32], 2).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::MiFgsm).with_epsilon(0.15);
        cfg.step_size = 0.1;
        cfg.iterations = 2;
        let r = mi_fgsm(&ConstGrad, &x, &y, &cfg).unwrap();
        // step 1: 0.5 -> 0.6; step 2: clamped to 0.5 + eps = 0.65
        assert!((r.adversarial.data()[[0, 0, 0, 0]] - 0.65).abs() < 1e-6);
    }

    #[test]
    fn mi_fgsm_with_zero_momentum_matches_bim() {
        let mut rng = crate::nn::rng_stream(7, 0);
        use rand::Rng;
        let w = Array2::from_shape_fn((3, 16), |_| rng.random_range(-1.0..1.0));
        let model = LinearSoftmax::new(w, Array1::zeros(3), (1, 4, 4)).unwrap();
        let data = Array4::from_shape_fn((4, 1, 4, 4), |_| rng.random_range(0.2..0.8f32));
        let x = ImageBatch::new(data).unwrap();
        let y = LabelBatch::new(Array1::from_vec(vec![0, 1, 2, 0]), 3).unwrap();
        let mut cfg_mi = AttackConfig::new(AttackKind::MiFgsm).with_epsilon(0.2);
        cfg_mi.momentum_decay = 0.0;
        cfg_mi.iterations = 6;
        let via_mi = mi_fgsm(&model, &x, &y, &cfg_mi).unwrap();
        let mut cfg_bim = AttackConfig::new(AttackKind::Bim).with_epsilon(0.2);
        cfg_bim.iterations = 6;
        cfg_bim.random_start = false;
        let via_bim = bim(&model, &x, &y, &cfg_bim).unwrap();
        assert_eq!(via_mi.adversarial.data(), via_bim.adversarial.data());
    }

    // Exhaustive element-wise budget check against a scalar oracle.
    #[test]
    fn iterative_outputs_respect_the_budget() {
        let mut rng = crate::nn::rng_stream(11, 0);
        use rand::Rng;
        let w = Array2::from_shape_fn((3, 25), |_| rng.random_range(-2.0..2.0));
        let model = LinearSoftmax::new(w, Array1::zeros(3), (1, 5, 5)).unwrap();
        let data = Array4::from_shape_fn((6, 1, 5, 5), |_| rng.random_range(0.0..1.0f32));
        let x = ImageBatch::new(data).unwrap();
        let y = LabelBatch::new(Array1::from_vec(vec![0, 1, 2, 0, 1, 2]), 3).unwrap();
        for kind in [AttackKind::Bim, AttackKind::Pgd, AttackKind::MiFgsm] {
            let mut cfg = AttackConfig::new(kind).with_epsilon(0.07).with_seed(2);
            cfg.iterations = 8;
            cfg.step_size = 0.02;
            if kind == AttackKind::Bim {
                cfg.random_start = false;
            }
            let r = iterative_linf(
                &model,
                &x,
                &y,
                &cfg,
                match kind {
                    AttackKind::MiFgsm => Direction::Momentum {
                        decay: 1.0,
                        state: Array4::zeros(x.data().dim()),
                    },
                    _ => Direction::GradientSign,
                },
            )
            .unwrap();
            for (&a, &o) in r.adversarial.data().iter().zip(x.data().iter()) {
                assert!(
                    (a - o).abs() <= 0.07 + 1e-6,
                    "{kind}: |{a} - {o}| exceeds epsilon"
                );
                assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
