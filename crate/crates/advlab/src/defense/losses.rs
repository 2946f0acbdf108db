//! GAN and pixel losses with their gradients.
//!
//! Scores passed to the BCE losses must be probabilities in `(0,1)`
//! (sigmoid outputs); logs are guarded with a small epsilon so saturated
//! `f32` sigmoids stay finite.

use ndarray::Array4;

use crate::error::{AdvError, Result};

const LOG_EPS: f64 = 1e-7;

fn check_scores(name: &str, scores: &Array4<f32>) -> Result<()> {
    for &s in scores.iter() {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(AdvError::Data(format!(
                "{name}: score {s} outside the (0,1) probability domain"
            )));
        }
    }
    Ok(())
}

/// Generator's adversarial loss: `-mean(log D(G(x,z)))` over all patches
/// and the batch.
pub fn generator_adversarial_loss(d_fake: &Array4<f32>) -> Result<f64> {
    check_scores("generator_adversarial_loss", d_fake)?;
    let n = d_fake.len() as f64;
    let sum: f64 = d_fake.iter().map(|&s| (s as f64).max(LOG_EPS).ln()).sum();
    Ok(-sum / n)
}

/// Loss plus gradient with respect to the fake scores.
pub fn generator_adversarial_grad(d_fake: &Array4<f32>) -> Result<(f64, Array4<f32>)> {
    let loss = generator_adversarial_loss(d_fake)?;
    let n = d_fake.len() as f64;
    let grad = d_fake.mapv(|s| (-1.0 / (n * (s as f64).max(LOG_EPS))) as f32);
    Ok((loss, grad))
}

/// Discriminator BCE: `-mean(log D(x,y) + log(1 - D(G(x,z),y)))`.
pub fn discriminator_loss(d_real: &Array4<f32>, d_fake: &Array4<f32>) -> Result<f64> {
    check_scores("discriminator_loss (real)", d_real)?;
    check_scores("discriminator_loss (fake)", d_fake)?;
    if d_real.dim() != d_fake.dim() {
        return Err(AdvError::Shape("discriminator score grids differ in shape".into()));
    }
    let n = d_real.len() as f64;
    let real: f64 = d_real.iter().map(|&s| (s as f64).max(LOG_EPS).ln()).sum();
    let fake: f64 = d_fake.iter().map(|&s| (1.0 - s as f64).max(LOG_EPS).ln()).sum();
    Ok(-(real + fake) / n)
}

/// Loss plus gradients with respect to both score grids.
pub fn discriminator_grads(
    d_real: &Array4<f32>,
    d_fake: &Array4<f32>,
) -> Result<(f64, Array4<f32>, Array4<f32>)> {
    let loss = discriminator_loss(d_real, d_fake)?;
    let n = d_real.len() as f64;
    let g_real = d_real.mapv(|s| (-1.0 / (n * (s as f64).max(LOG_EPS))) as f32);
    let g_fake = d_fake.mapv(|s| (1.0 / (n * (1.0 - s as f64).max(LOG_EPS))) as f32);
    Ok((loss, g_real, g_fake))
}

/// Mean absolute pixel difference.
pub fn l1_pixel_loss(target: &Array4<f32>, generated: &Array4<f32>) -> Result<f64> {
    if target.dim() != generated.dim() {
        return Err(AdvError::Shape(format!(
            "l1_pixel_loss: {:?} vs {:?}",
            target.dim(),
            generated.dim()
        )));
    }
    let n = target.len() as f64;
    let sum: f64 =
        target.iter().zip(generated.iter()).map(|(&t, &g)| (t as f64 - g as f64).abs()).sum();
    Ok(sum / n)
}

/// Loss plus gradient with respect to `generated`.
pub fn l1_pixel_grad(target: &Array4<f32>, generated: &Array4<f32>) -> Result<(f64, Array4<f32>)> {
    let loss = l1_pixel_loss(target, generated)?;
    let n = target.len() as f32;
    let mut grad = Array4::zeros(generated.dim());
    ndarray::Zip::from(&mut grad).and(generated).and(target).for_each(|g, &gv, &tv| {
        *g = (gv - tv).signum() / n;
    });
    Ok((loss, grad))
}

/// The weighted training objective: `adv + λ1·l1 + λ2·perceptual`.
pub fn total_generator_objective(adv: f64, l1: f64, perceptual: f64, lambda1: f64, lambda2: f64) -> f64 {
    adv + lambda1 * l1 + lambda2 * perceptual
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: f32) -> Array4<f32> {
        Array4::from_elem((2, 1, 3, 3), v)
    }

    #[test]
    fn perfect_fooling_gives_zero_generator_loss() {
        let loss = generator_adversarial_loss(&grid(1.0)).unwrap();
        assert!(loss.abs() < 1e-6, "loss {loss}");
    }

    // -log 0.5 = ln 2
    #[test]
    fn half_scores_give_ln2() {
        let loss = generator_adversarial_loss(&grid(0.5)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn generator_loss_decreases_as_scores_increase() {
        let lo = generator_adversarial_loss(&grid(0.3)).unwrap();
        let hi = generator_adversarial_loss(&grid(0.8)).unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn scores_outside_domain_are_rejected() {
        let mut bad = grid(0.5);
        bad[[0, 0, 0, 0]] = 1.5;
        assert!(generator_adversarial_loss(&bad).is_err());
        bad[[0, 0, 0, 0]] = f32::NAN;
        assert!(generator_adversarial_loss(&bad).is_err());
    }

    #[test]
    fn perfect_discrimination_gives_zero() {
        let loss = discriminator_loss(&grid(1.0), &grid(0.0)).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    // -[log 0.5 + log 0.5] = 2 ln 2
    #[test]
    fn half_scores_give_2ln2() {
        let loss = discriminator_loss(&grid(0.5), &grid(0.5)).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn discriminator_loss_minimized_at_zero_fake_scores() {
        let at_zero = discriminator_loss(&grid(0.9), &grid(0.0)).unwrap();
        let at_half = discriminator_loss(&grid(0.9), &grid(0.5)).unwrap();
        assert!(at_zero < at_half);
    }

    #[test]
    fn l1_cases() {
        assert_eq!(l1_pixel_loss(&grid(0.4), &grid(0.4)).unwrap(), 0.0);
        let a = Array4::from_elem((1, 1, 1, 1), 0.0f32);
        let b = Array4::from_elem((1, 1, 1, 1), 0.5f32);
        assert!((l1_pixel_loss(&a, &b).unwrap() - 0.5).abs() < 1e-7);
        assert!(l1_pixel_loss(&a, &Array4::zeros((1, 1, 2, 2))).is_err());
    }

    // Scalar-loop oracle on random batches.
    #[test]
    fn l1_matches_loop_oracle() {
        use rand::Rng;
        let mut rng = crate::nn::rng_stream(3, 1);
        let a = Array4::from_shape_fn((3, 1, 4, 4), |_| rng.random_range(0.0..1.0f32));
        let b = Array4::from_shape_fn((3, 1, 4, 4), |_| rng.random_range(0.0..1.0f32));
        let got = l1_pixel_loss(&a, &b).unwrap();
        let mut oracle = 0.0f64;
        for (x, y) in a.iter().zip(b.iter()) {
            oracle += (x - y).abs() as f64;
        }
        oracle /= a.len() as f64;
        assert!((got - oracle).abs() < 1e-9);
    }

    // adv=0.5, l1=0.01, perc=0.2 with default weights -> 0.5 + 1.0 + 0.2
    #[test]
    fn objective_arithmetic() {
        let total = total_generator_objective(0.5, 0.01, 0.2, 100.0, 1.0);
        assert!((total - 1.7).abs() < 1e-12);
        assert_eq!(total_generator_objective(0.37, 9.0, 9.0, 0.0, 0.0), 0.37);
    }

    #[test]
    fn objective_is_linear_in_each_component() {
        let base = total_generator_objective(0.1, 0.2, 0.3, 100.0, 1.0);
        let bumped = total_generator_objective(0.1, 0.2 + 0.05, 0.3, 100.0, 1.0);
        assert!((bumped - base - 100.0 * 0.05).abs() < 1e-9);
    }
}
