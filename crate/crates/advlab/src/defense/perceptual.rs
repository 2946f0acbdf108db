//! Perceptual loss: L1 distance between frozen feature-extractor
//! activations of the target and generated images, summed over tapped
//! layers with per-layer mean reduction.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::classifiers::ConvNet;
use crate::error::{AdvError, Result};

/// A frozen network exposing intermediate feature maps and their
/// vector-Jacobian product with respect to the input.
pub trait FeatureExtractor: Send + Sync {
    fn tap_names(&self) -> Vec<String>;
    fn taps(&self, x: &Array4<f32>) -> Vec<Array4<f32>>;
    /// One optional upstream gradient per tap; returns the input gradient.
    fn taps_vjp(&self, x: &Array4<f32>, upstream: &[Option<Array4<f32>>]) -> Array4<f32>;
    /// Exact feature maps through an `f64` path, for objective self-checks.
    fn taps_f64(&self, x: &Array4<f64>) -> Vec<Array4<f64>>;
}

impl FeatureExtractor for ConvNet {
    fn tap_names(&self) -> Vec<String> {
        ConvNet::tap_names(self)
    }

    fn taps(&self, x: &Array4<f32>) -> Vec<Array4<f32>> {
        self.stage_outputs(x)
    }

    fn taps_vjp(&self, x: &Array4<f32>, upstream: &[Option<Array4<f32>>]) -> Array4<f32> {
        let (_, cache) = self.forward_cached(x);
        self.stages_vjp(&cache, upstream)
    }

    fn taps_f64(&self, x: &Array4<f64>) -> Vec<Array4<f64>> {
        self.stage_outputs_f64(x)
    }
}

/// The identity map as a single tap. With unit weight the perceptual loss
/// degenerates to the mean absolute pixel difference.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn tap_names(&self) -> Vec<String> {
        vec!["identity".into()]
    }
    fn taps(&self, x: &Array4<f32>) -> Vec<Array4<f32>> {
        vec![x.clone()]
    }
    fn taps_vjp(&self, _x: &Array4<f32>, upstream: &[Option<Array4<f32>>]) -> Array4<f32> {
        upstream[0].clone().expect("identity extractor needs its single tap gradient")
    }
    fn taps_f64(&self, x: &Array4<f64>) -> Vec<Array4<f64>> {
        vec![x.clone()]
    }
}

/// Perceptual-loss wiring: which extractor, which of its layers, and a
/// non-negative weight per tapped layer (applied on top of the mean
/// reduction over that layer's elements).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerceptualConfig {
    /// Identifier of the frozen feature network (checkpoint fingerprint or
    /// path; informational).
    pub feature_network: String,
    pub tapped_layers: Vec<String>,
    pub layer_weights: Vec<f32>,
}

impl PerceptualConfig {
    /// Taps every conv stage of the extractor except the topmost layers
    /// (the dense head is never tappable), unit weights.
    pub fn all_conv_stages(feature_network: &str, extractor: &dyn FeatureExtractor) -> Self {
        let names = extractor.tap_names();
        Self {
            feature_network: feature_network.into(),
            layer_weights: vec![1.0; names.len()],
            tapped_layers: names,
        }
    }

    /// Maps tapped layer names to extractor tap indices, validating names
    /// and weights.
    fn resolve(&self, extractor: &dyn FeatureExtractor) -> Result<Vec<(usize, f32)>> {
        if self.tapped_layers.is_empty() {
            return Err(AdvError::Config("perceptual loss needs at least one tapped layer".into()));
        }
        if self.tapped_layers.len() != self.layer_weights.len() {
            return Err(AdvError::Config(format!(
                "{} tapped layers but {} weights",
                self.tapped_layers.len(),
                self.layer_weights.len()
            )));
        }
        if let Some(w) = self.layer_weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(AdvError::Config(format!("layer weights must be >= 0, got {w}")));
        }
        let names = extractor.tap_names();
        let mut out = Vec::with_capacity(self.tapped_layers.len());
        for (layer, &weight) in self.tapped_layers.iter().zip(&self.layer_weights) {
            let idx = names.iter().position(|n| n == layer).ok_or_else(|| {
                AdvError::Config(format!(
                    "layer '{layer}' not in feature network (available: {})",
                    names.join(", ")
                ))
            })?;
            out.push((idx, weight));
        }
        Ok(out)
    }
}

/// `sum_k a_k * mean(|V_k(target) - V_k(generated)|)`, non-negative and
/// symmetric in its two image arguments.
pub fn perceptual_loss(
    cfg: &PerceptualConfig,
    extractor: &dyn FeatureExtractor,
    target: &Array4<f32>,
    generated: &Array4<f32>,
) -> Result<f64> {
    if target.dim() != generated.dim() {
        return Err(AdvError::Shape("perceptual loss: shape mismatch".into()));
    }
    let taps = cfg.resolve(extractor)?;
    let feats_t = extractor.taps(target);
    let feats_g = extractor.taps(generated);
    let mut total = 0.0f64;
    for &(idx, weight) in &taps {
        let mut sum = 0.0f64;
        for (&a, &b) in feats_t[idx].iter().zip(feats_g[idx].iter()) {
            sum += (a as f64 - b as f64).abs();
        }
        total += weight as f64 * sum / feats_t[idx].len() as f64;
    }
    Ok(total)
}

/// Loss plus its gradient with respect to `generated`.
pub fn perceptual_loss_grad(
    cfg: &PerceptualConfig,
    extractor: &dyn FeatureExtractor,
    target: &Array4<f32>,
    generated: &Array4<f32>,
) -> Result<(f64, Array4<f32>)> {
    if target.dim() != generated.dim() {
        return Err(AdvError::Shape("perceptual loss: shape mismatch".into()));
    }
    let taps = cfg.resolve(extractor)?;
    let feats_t = extractor.taps(target);
    let feats_g = extractor.taps(generated);
    let n_stages = extractor.tap_names().len();
    let mut upstream: Vec<Option<Array4<f32>>> = (0..n_stages).map(|_| None).collect();
    let mut total = 0.0f64;
    for &(idx, weight) in &taps {
        let numel = feats_t[idx].len() as f64;
        let mut sum = 0.0f64;
        let mut g = Array4::zeros(feats_g[idx].dim());
        ndarray::Zip::from(&mut g)
            .and(&feats_g[idx])
            .and(&feats_t[idx])
            .for_each(|gv, &fg, &ft| {
                let d = fg as f64 - ft as f64;
                sum += d.abs();
                *gv = weight * d.signum() as f32 / numel as f32;
            });
        total += weight as f64 * sum / numel;
        match &mut upstream[idx] {
            Some(u) => *u += &g,
            slot => *slot = Some(g),
        }
    }
    let grad = extractor.taps_vjp(generated, &upstream);
    Ok((total, grad))
}

/// Exact `f64` evaluation for self-checks.
pub fn perceptual_loss_f64(
    cfg: &PerceptualConfig,
    extractor: &dyn FeatureExtractor,
    target: &Array4<f64>,
    generated: &Array4<f64>,
) -> Result<f64> {
    let taps = cfg.resolve(extractor)?;
    let feats_t = extractor.taps_f64(target);
    let feats_g = extractor.taps_f64(generated);
    let mut total = 0.0f64;
    for &(idx, weight) in &taps {
        let mut sum = 0.0f64;
        for (&a, &b) in feats_t[idx].iter().zip(feats_g[idx].iter()) {
            sum += (a - b).abs();
        }
        total += weight as f64 * sum / feats_t[idx].len() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn identity_cfg() -> PerceptualConfig {
        PerceptualConfig {
            feature_network: "identity".into(),
            tapped_layers: vec!["identity".into()],
            layer_weights: vec![1.0],
        }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let x = Array4::from_elem((2, 1, 3, 3), 0.4f32);
        let loss = perceptual_loss(&identity_cfg(), &IdentityExtractor, &x, &x).unwrap();
        assert_eq!(loss, 0.0);
    }

    // With the identity tap and mean reduction the loss equals the mean
    // absolute pixel difference; hand-checked on a 2x2 image.
    #[test]
    fn identity_tap_equals_mean_absolute_difference() {
        let a = Array4::from_shape_vec((1, 1, 2, 2), vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let b = Array4::from_shape_vec((1, 1, 2, 2), vec![0.5, 0.5, 0.0, 0.75]).unwrap();
        let loss = perceptual_loss(&identity_cfg(), &IdentityExtractor, &a, &b).unwrap();
        let expected = (0.5 + 0.0 + 1.0 + 0.5) / 4.0;
        assert!((loss - expected).abs() < 1e-7);
    }

    #[test]
    fn loss_is_symmetric() {
        let mut rng = crate::nn::rng_stream(12, 0);
        let a = Array4::from_shape_fn((2, 1, 4, 4), |_| rng.random_range(0.0..1.0f32));
        let b = Array4::from_shape_fn((2, 1, 4, 4), |_| rng.random_range(0.0..1.0f32));
        let ab = perceptual_loss(&identity_cfg(), &IdentityExtractor, &a, &b).unwrap();
        let ba = perceptual_loss(&identity_cfg(), &IdentityExtractor, &b, &a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn unknown_layer_name_is_a_config_error() {
        let cfg = PerceptualConfig {
            feature_network: "identity".into(),
            tapped_layers: vec!["conv9".into()],
            layer_weights: vec![1.0],
        };
        let x = Array4::zeros((1, 1, 2, 2));
        let err = perceptual_loss(&cfg, &IdentityExtractor, &x, &x).unwrap_err();
        assert!(err.to_string().contains("conv9"));
    }

    #[test]
    fn gradient_matches_finite_difference_through_conv_features() {
        use crate::classifiers::{Arch, ConvNet, ConvNetConfig};
        let net = ConvNet::new(
            ConvNetConfig { arch: Arch::ConvNetA, num_classes: 4, input_shape: (1, 8, 8) },
            3,
        )
        .unwrap();
        let cfg = PerceptualConfig::all_conv_stages("test", &net);
        let mut rng = crate::nn::rng_stream(5, 5);
        let target = Array4::from_shape_fn((1, 1, 8, 8), |_| rng.random_range(0.2..0.8f32));
        let gen = Array4::from_shape_fn((1, 1, 8, 8), |_| rng.random_range(0.2..0.8f32));
        let (_, grad) = perceptual_loss_grad(&cfg, &net, &target, &gen).unwrap();
        let h = 1e-3f32;
        for &idx in &[[0usize, 0, 2, 3], [0, 0, 5, 1]] {
            let mut hi = gen.clone();
            hi[idx] += h;
            let mut lo = gen.clone();
            lo[idx] -= h;
            let fd = (perceptual_loss_f64(&cfg, &net, &target.mapv(f64::from), &hi.mapv(f64::from))
                .unwrap()
                - perceptual_loss_f64(&cfg, &net, &target.mapv(f64::from), &lo.mapv(f64::from))
                    .unwrap())
                / (2.0 * h as f64);
            let an = grad[idx] as f64;
            assert!(
                (fd - an).abs() < 2e-2 * an.abs().max(0.05),
                "fd {fd} vs analytic {an}"
            );
        }
    }
}
