//! Isolate gradient-check error by objective term.
use advlab::defense::*;
use advlab::nn::{rng_stream, ParamCollect};
use ndarray::Array4;
use rand::Rng;

fn rand_images(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Array4<f32> {
    let mut rng = rng_stream(seed, 0);
    Array4::from_shape_fn((n, c, h, w), |_| rng.random_range(0.0..1.0f32))
}

fn main() {
    let mut gcfg = GeneratorConfig::desk((1, 8, 8));
    gcfg.encoder_blocks = 1;
    gcfg.decoder_blocks = 0;
    gcfg.residual_blocks = std::env::var("RES").map(|v| v.parse().unwrap()).unwrap_or(1);
    gcfg.base_channels = 4;
    gcfg.dropout_rate = 0.0;
    let dcfg = DiscriminatorConfig {
        input_shape: (1, 8, 8), conv_layers: 1, base_channels: 4, residual_blocks: std::env::var("DRES").map(|v| v.parse().unwrap()).unwrap_or(1),
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

    for (name, l1w, l2w, advw) in [("adv", 0.0f32, 0.0f32, 1.0f32), ("l1", 1.0, 0.0, 0.0), ("perc", 0.0, 1.0, 0.0)] {
        let (fake, gcache) = generator.forward_train(&att, &mut rng_stream(0, 0));
        let (d_fake, dcache) = discriminator.forward_train(&att, &fake);
        let (_, g_scores) = losses::generator_adversarial_grad(&d_fake).unwrap();
        let g_from_d = discriminator.backward(&dcache, &g_scores, None);
        let (_, g_l1) = losses::l1_pixel_grad(&clean, &fake).unwrap();
        let (_, g_p) = perceptual_loss_grad(&pcfg, &extractor, &clean, &fake).unwrap();
        let mut g_total = g_from_d.mapv(|v| v * advw);
        ndarray::Zip::from(&mut g_total).and(&g_l1).and(&g_p).for_each(|acc, &a, &b| {
            *acc += l1w * a + l2w * b;
        });
        let mut grads = generator.zeros_like();
        generator.backward(&gcache, &g_total, &mut grads);

        let objective = |g: &Generator| -> f64 {
            let fake = g.forward_train_f64(&att.mapv(f64::from));
            let scores = discriminator.forward_train_f64(&att.mapv(f64::from), &fake);
            let adv: f64 = -scores.iter().map(|&s| s.max(1e-12).ln()).sum::<f64>() / scores.len() as f64;
            let l1: f64 = fake.iter().zip(clean.iter()).map(|(&f, &c)| (f - c as f64).abs()).sum::<f64>() / fake.len() as f64;
            let perc = perceptual_loss_f64(&pcfg, &extractor, &clean.mapv(f64::from), &fake).unwrap();
            advw as f64 * adv + l1w as f64 * l1 + l2w as f64 * perc
        };

        let grad_slices = grads.learnables();
        let g_scale = grad_slices.iter().flat_map(|s| s.iter()).fold(0.0f32, |a, &g| a.max(g.abs())) as f64;
        let mut worst = (0.0f64, 0usize, 0usize);
        for tensor_idx in 0..grad_slices.len() {
            let slice = grad_slices[tensor_idx];
            let (best_i, best_g) = slice.iter().enumerate().fold((0usize, 0.0f32), |acc, (i, &g)| {
                if g.abs() > acc.1 { (i, g.abs()) } else { acc }
            });
            if (best_g as f64) < 1e-3 * g_scale { continue; }
            for h in [1e-3f32, 1e-4] {
                let mut hi = generator.clone();
                hi.learnables_mut()[tensor_idx][best_i] += h;
                let mut lo = generator.clone();
                lo.learnables_mut()[tensor_idx][best_i] -= h;
                let fd = (objective(&hi) - objective(&lo)) / (2.0 * h as f64);
                let an = slice[best_i] as f64;
                let rel = (fd - an).abs() / (an.abs() + 1e-2 * g_scale);
                if rel > worst.0 { worst = (rel, tensor_idx, best_i); }
                println!("{name}: tensor {tensor_idx} idx {best_i} h={h}: fd {fd:.6e} an {an:.6e} rel {rel:.2e}");
            }
        }
        println!("== {name}: worst rel {:.3e} at tensor {} idx {}\n", worst.0, worst.1, worst.2);
    }
}
