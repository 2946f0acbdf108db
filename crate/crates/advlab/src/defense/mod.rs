//! The purification defense: a residual-augmented U-Net generator trained
//! as a conditional GAN against a residual-augmented PatchGAN
//! discriminator, with L1 + perceptual + adversarial losses.

mod checkpoint;
mod discriminator;
mod generator;
pub mod losses;
mod perceptual;
mod train;

pub use checkpoint::{
    load_defense, save_defense, DefenseCheckpointMeta, DefenseModel, TrainingManifest,
    DEFENSE_FORMAT_VERSION,
};
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorCache, GeneratorConfig, ResidualBlock};
pub use perceptual::{
    perceptual_loss, perceptual_loss_f64, perceptual_loss_grad, FeatureExtractor,
    IdentityExtractor, PerceptualConfig,
};
pub use train::{train_defense, DefenseTrainConfig, EpochLog};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{param_count, rng_stream, ParamCollect};
    use ndarray::Array4;
    use rand::Rng;

    fn rand_images(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Array4<f32> {
        let mut rng = rng_stream(seed, 0);
        Array4::from_shape_fn((n, c, h, w), |_| rng.random_range(0.0..1.0f32))
    }

    // zeroing the residual function leaves y = x
    #[test]
    fn residual_block_with_zero_internal_weights_is_identity() {
        let mut rng = rng_stream(3, 1);
        let mut block = ResidualBlock::new(4, &mut rng);
        block.zero_internal();
        let x = rand_images(3, 4, 6, 6, 5);
        let (y_train, _) = block.forward_train(&x);
        let y_eval = block.forward_eval(&x);
        let diff = |y: &Array4<f32>| {
            y.iter().zip(x.iter()).map(|(&a, &b)| (a - b).abs()).fold(0.0f32, f32::max)
        };
        assert!(diff(&y_train) < 1e-6, "train-mode identity broken: {}", diff(&y_train));
        assert!(diff(&y_eval) < 1e-6, "eval-mode identity broken: {}", diff(&y_eval));
    }

    // y - x must equal an independent recomputation of F(x)
    #[test]
    fn residual_block_adds_exactly_f_of_x() {
        let mut rng = rng_stream(7, 2);
        let block = ResidualBlock::new(3, &mut rng);
        let x = rand_images(2, 3, 5, 5, 9);
        let (y, _) = block.forward_train(&x);
        let f = block.forward_f64(&x.mapv(f64::from)) - x.mapv(f64::from);
        let recomposed = x.mapv(f64::from) + &f;
        let diff = y
            .mapv(f64::from)
            .iter()
            .zip(recomposed.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-4, "f32 vs f64 residual recomputation: {diff}");
    }

    #[test]
    fn generator_is_an_endomorphism_on_both_geometries() {
        for (c, h, w) in [(1usize, 28usize, 28usize), (3, 32, 32)] {
            let cfg = GeneratorConfig::desk((c, h, w));
            let gen = Generator::new(cfg, 11).unwrap();
            let x = rand_images(2, c, h, w, 13);
            let y = gen.forward_eval(&x);
            assert_eq!(y.dim(), (2, c, h, w));
            assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_residual_blocks_gives_a_plain_unet() {
        let cfg = GeneratorConfig::desk((1, 28, 28)).with_residual_blocks(0);
        let gen = Generator::new(cfg, 1).unwrap();
        let desc = gen.describe();
        assert!(!desc.contains("res x"), "plain U-Net must have no residual blocks:\n{desc}");
        let with = Generator::new(GeneratorConfig::desk((1, 28, 28)), 1).unwrap();
        assert!(with.describe().contains("res x7"), "default keeps 7 residual blocks");
    }

    #[test]
    fn parameter_count_increases_with_residual_blocks() {
        let counts: Vec<usize> = [1usize, 3, 5, 7]
            .iter()
            .map(|&r| {
                let cfg = GeneratorConfig::desk((1, 28, 28)).with_residual_blocks(r);
                param_count(&Generator::new(cfg, 2).unwrap())
            })
            .collect();
        assert!(counts.windows(2).all(|p| p[1] > p[0]), "{counts:?}");
    }

    #[test]
    fn indivisible_input_is_a_construction_error() {
        let mut cfg = GeneratorConfig::desk((1, 28, 28));
        cfg.encoder_blocks = 3; // 28 not divisible by 8
        cfg.decoder_blocks = 2;
        assert!(Generator::new(cfg, 0).is_err());
    }

    #[test]
    fn discriminator_emits_a_patch_grid() {
        let cfg = DiscriminatorConfig::desk((1, 28, 28));
        assert_eq!(cfg.patch_output_shape(), (6, 6));
        let disc = Discriminator::new(cfg, 5).unwrap();
        let cond = rand_images(3, 1, 28, 28, 1);
        let cand = rand_images(3, 1, 28, 28, 2);
        let scores = disc.forward_eval(&cond, &cand);
        assert_eq!(scores.dim(), (3, 1, 6, 6));
        assert!(scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
        let scores2 = disc.forward_eval(&cond, &cand);
        assert_eq!(scores, scores2);
    }

    #[test]
    fn discriminator_is_sensitive_to_the_candidate() {
        let disc = Discriminator::new(DiscriminatorConfig::desk((1, 28, 28)), 6).unwrap();
        let cond = rand_images(2, 1, 28, 28, 3);
        let cand_a = rand_images(2, 1, 28, 28, 4);
        let cand_b = rand_images(2, 1, 28, 28, 5);
        let sa = disc.forward_eval(&cond, &cand_a);
        let sb = disc.forward_eval(&cond, &cand_b);
        assert_ne!(sa, sb, "untrained but non-zero discriminator must react to the candidate");
    }

    #[test]
    fn generator_train_forward_is_seeded_deterministic() {
        let cfg = GeneratorConfig::desk((1, 28, 28));
        let gen = Generator::new(cfg, 21).unwrap();
        let x = rand_images(2, 1, 28, 28, 22);
        let (y1, _) = gen.forward_train(&x, &mut rng_stream(9, 1));
        let (y2, _) = gen.forward_train(&x, &mut rng_stream(9, 1));
        assert_eq!(y1, y2);
    }

    // Finite-difference check of the full training objective w.r.t. probe
    // weights, through the f64 reference forward (dropout disabled).
    #[test]
    fn generator_objective_gradient_matches_finite_difference() {
        let mut gcfg = GeneratorConfig::desk((1, 8, 8));
        gcfg.encoder_blocks = 1;
        gcfg.decoder_blocks = 0;
        gcfg.residual_blocks = 1;
        gcfg.base_channels = 4;
        gcfg.dropout_rate = 0.0;
        let dcfg = DiscriminatorConfig {
            input_shape: (1, 8, 8),
            conv_layers: 1,
            base_channels: 4,
            residual_blocks: 1,
        };
        let generator = Generator::new(gcfg, 31).unwrap();
        let discriminator = Discriminator::new(dcfg, 32).unwrap();
        let att = rand_images(4, 1, 8, 8, 33);
        let clean = rand_images(4, 1, 8, 8, 34);
        let pcfg = PerceptualConfig {
            feature_network: "identity".into(),
            tapped_layers: vec!["identity".into()],
            layer_weights: vec![1.0],
        };
        let extractor = IdentityExtractor;
        let (lambda1, lambda2) = (100.0f32, 1.0f32);

        let (fake, gcache) = generator.forward_train(&att, &mut rng_stream(0, 0));
        let (d_fake, dcache) = discriminator.forward_train(&att, &fake);
        let (_, g_scores) = losses::generator_adversarial_grad(&d_fake).unwrap();
        let g_from_d = discriminator.backward(&dcache, &g_scores, None);
        let (_, g_l1) = losses::l1_pixel_grad(&clean, &fake).unwrap();
        let (_, g_p) = perceptual_loss_grad(&pcfg, &extractor, &clean, &fake).unwrap();
        let mut g_total = g_from_d;
        ndarray::Zip::from(&mut g_total).and(&g_l1).and(&g_p).for_each(|acc, &a, &b| {
            *acc += lambda1 * a + lambda2 * b;
        });
        let mut grads = generator.zeros_like();
        generator.backward(&gcache, &g_total, &mut grads);

        let objective = |g: &Generator| -> f64 {
            let fake = g.forward_train_f64(&att.mapv(f64::from));
            let scores = discriminator.forward_train_f64(&att.mapv(f64::from), &fake);
            let adv: f64 =
                -scores.iter().map(|&s| s.max(1e-12).ln()).sum::<f64>() / scores.len() as f64;
            let l1: f64 = fake
                .iter()
                .zip(clean.iter())
                .map(|(&f, &c)| (f - c as f64).abs())
                .sum::<f64>()
                / fake.len() as f64;
            let perc =
                perceptual_loss_f64(&pcfg, &extractor, &clean.mapv(f64::from), &fake).unwrap();
            adv + lambda1 as f64 * l1 + lambda2 as f64 * perc
        };

        // probe the largest-gradient weight in a spread of tensors
        let grad_slices = grads.learnables();
        let g_scale = grad_slices
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f32, |a, &g| a.max(g.abs())) as f64;
        let mut max_rel = 0.0f64;
        let mut probed = 0;
        for tensor_idx in (0..grad_slices.len()).step_by(4) {
            let slice = grad_slices[tensor_idx];
            let (best_i, best_g) = slice
                .iter()
                .enumerate()
                .fold((0usize, 0.0f32), |acc, (i, &g)| {
                    if g.abs() > acc.1 {
                        (i, g.abs())
                    } else {
                        acc
                    }
                });
            if (best_g as f64) < 1e-3 * g_scale {
                continue;
            }
            // small step: the L1 terms are piecewise linear and a large h
            // steps across kinks; the f64 objective keeps FD noise tiny
            let h = 1e-4f32;
            let mut hi = generator.clone();
            hi.learnables_mut()[tensor_idx][best_i] += h;
            let mut lo = generator.clone();
            lo.learnables_mut()[tensor_idx][best_i] -= h;
            let fd = (objective(&hi) - objective(&lo)) / (2.0 * h as f64);
            let an = slice[best_i] as f64;
            let rel = (fd - an).abs() / (an.abs() + 1e-2 * g_scale);
            max_rel = max_rel.max(rel);
            probed += 1;
        }
        assert!(probed >= 3, "too few probe weights ({probed})");
        assert!(max_rel <= 1e-3, "objective gradient check failed: {max_rel}");
    }

    #[test]
    fn training_on_identity_pairs_crushes_l1() {
        use crate::datasets::PairSet;
        use crate::core::{ImageBatch, LabelBatch};
        // tiny 8-pair dataset of (clean, clean): the generator must learn
        // the identity, collapsing the L1 loss by at least 10x
        let imgs = rand_images(8, 1, 8, 8, 40);
        let clean = ImageBatch::new(imgs).unwrap();
        let labels =
            LabelBatch::new(ndarray::Array1::from_vec((0..8u32).collect()), 10).unwrap();
        let pairs = PairSet {
            adversarial: clean.clone(),
            clean: clean.clone(),
            labels,
            attack_tags: vec!["clean".into(); 8],
            model_tag: "none".into(),
        };
        let mut gcfg = GeneratorConfig::desk((1, 8, 8));
        gcfg.encoder_blocks = 1;
        gcfg.decoder_blocks = 0;
        gcfg.base_channels = 8;
        gcfg.residual_blocks = 1;
        gcfg.dropout_rate = 0.0;
        let dcfg = DiscriminatorConfig {
            input_shape: (1, 8, 8),
            conv_layers: 1,
            base_channels: 4,
            residual_blocks: 0,
        };
        let pcfg = PerceptualConfig {
            feature_network: "identity".into(),
            tapped_layers: vec!["identity".into()],
            layer_weights: vec![1.0],
        };
        let tcfg = DefenseTrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 3e-3,
            seed: 77,
            ..Default::default()
        };
        let (_, logs) =
            train_defense(&pairs, "test", &gcfg, &dcfg, &pcfg, &IdentityExtractor, &tcfg, None)
                .unwrap();
        let first = logs.first().unwrap().l1;
        let last = logs.last().unwrap().l1;
        assert!(
            last * 10.0 <= first,
            "L1 should fall at least 10x on identity pairs: {first} -> {last}"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact_on_a_probe_batch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("defense.ckpt");
        let gcfg = GeneratorConfig::desk((1, 28, 28)).with_residual_blocks(2);
        let dcfg = DiscriminatorConfig::desk((1, 28, 28)).with_residual_blocks(1);
        let model = DefenseModel {
            generator: Generator::new(gcfg.clone(), 3).unwrap(),
            discriminator: Discriminator::new(dcfg.clone(), 4).unwrap(),
            meta: DefenseCheckpointMeta {
                format_version: DEFENSE_FORMAT_VERSION,
                generator: gcfg,
                discriminator: dcfg,
                perceptual: PerceptualConfig {
                    feature_network: "id".into(),
                    tapped_layers: vec!["identity".into()],
                    layer_weights: vec![1.0],
                },
                lambda1: 100.0,
                lambda2: 1.0,
                manifest: TrainingManifest {
                    dataset_fingerprint: "abc".into(),
                    attack_kinds: vec!["fgsm".into()],
                    epochs: 0,
                    seed: 3,
                },
            },
        };
        save_defense(&path, &model).unwrap();
        let loaded = load_defense(&path).unwrap();
        let probe = crate::core::ImageBatch::new(rand_images(3, 1, 28, 28, 50)).unwrap();
        let before = model.reconstruct(&probe).unwrap();
        let after = loaded.reconstruct(&probe).unwrap();
        assert_eq!(before.data(), after.data(), "reconstruction must be bit-identical");
        assert_eq!(model.fingerprint(), loaded.fingerprint());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        // PairSet cannot be built empty through the public API, so go
        // through train_defense's epoch validation instead
        let imgs = rand_images(2, 1, 8, 8, 1);
        let clean = crate::core::ImageBatch::new(imgs).unwrap();
        let labels = crate::core::LabelBatch::new(ndarray::array![0u32, 1], 10).unwrap();
        let pairs = crate::datasets::PairSet {
            adversarial: clean.clone(),
            clean,
            labels,
            attack_tags: vec!["clean".into(); 2],
            model_tag: "none".into(),
        };
        let mut gcfg = GeneratorConfig::desk((1, 8, 8));
        gcfg.encoder_blocks = 1;
        gcfg.decoder_blocks = 0;
        let dcfg = DiscriminatorConfig {
            input_shape: (1, 8, 8),
            conv_layers: 1,
            base_channels: 4,
            residual_blocks: 0,
        };
        let pcfg = PerceptualConfig {
            feature_network: "identity".into(),
            tapped_layers: vec!["identity".into()],
            layer_weights: vec![1.0],
        };
        let tcfg = DefenseTrainConfig { epochs: 0, ..Default::default() };
        assert!(train_defense(&pairs, "t", &gcfg, &dcfg, &pcfg, &IdentityExtractor, &tcfg, None)
            .is_err());
    }
}
