//! End-to-end defense probe: composite dataset -> GAN training -> defended
//! accuracy. Sizing scratchpad, not part of the test suite.

use advlab::attacks::{run_attack, AttackConfig, AttackKind};
use advlab::classifiers::{train_classifier, Arch, ConvNet, ConvNetConfig, TrainConfig};
use advlab::core::{predictions, Classifier, ImageBatch, LabelBatch};
use advlab::datasets::{build_adversarial_dataset, load_synthetic, BuildMode, SyntheticSpec};
use advlab::defense::{
    train_defense, DefenseTrainConfig, DiscriminatorConfig, GeneratorConfig, PerceptualConfig,
};
use std::time::Instant;

fn acc(net: &ConvNet, x: &ImageBatch, y: &LabelBatch) -> f64 {
    let preds = predictions(&net.logits(x));
    100.0 * preds.iter().zip(y.labels()).filter(|(p, t)| p == t).count() as f64 / y.len() as f64
}

fn main() {
    let epochs: usize = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(8);
    let base: usize = std::env::var("BASE").map(|v| v.parse().unwrap()).unwrap_or(16);
    let res: usize = std::env::var("RES").map(|v| v.parse().unwrap()).unwrap_or(7);
    let train_n: usize = std::env::var("TRAIN_N").map(|v| v.parse().unwrap()).unwrap_or(2000);

    let ds = load_synthetic(SyntheticSpec { train_n, test_n: 1000, ..Default::default() }).unwrap();
    let mut net = ConvNet::new(
        ConvNetConfig { arch: Arch::ConvNetA, num_classes: 10, input_shape: (1, 28, 28) },
        42,
    )
    .unwrap();
    train_classifier(
        &mut net,
        &ds.train_images,
        &ds.train_labels,
        &TrainConfig { epochs: 6, batch_size: 64, learning_rate: 1e-3, seed: 7 },
    )
    .unwrap();
    println!("clean test acc {:.1}%", acc(&net, &ds.test_images, &ds.test_labels));

    // table-scale attack configs (eps = 0.3)
    let mut fgsm = AttackConfig::new(AttackKind::Fgsm).with_epsilon(0.3);
    fgsm.seed = 11;
    let mut pgd = AttackConfig::new(AttackKind::Pgd).with_epsilon(0.3);
    pgd.seed = 12;
    let mut cw = AttackConfig::new(AttackKind::Cw);
    cw.cw_constant = 5.0;
    cw.cw_learning_rate = 0.02;
    cw.cw_steps = 150;
    cw.seed = 13;

    let t0 = Instant::now();
    let (pairs, manifest) = build_adversarial_dataset(
        &net,
        "convnet-a",
        &ds.train_images,
        &ds.train_labels,
        &[fgsm.clone(), pgd.clone(), cw.clone()],
        BuildMode::CrossProduct,
        99,
        "synthetic",
        "train",
    )
    .unwrap();
    println!("dataset: {} pairs in {:.0}s", pairs.len(), t0.elapsed().as_secs_f32());

    let gcfg = GeneratorConfig {
        base_channels: base,
        residual_blocks: res,
        ..GeneratorConfig::desk((1, 28, 28))
    };
    let dcfg = DiscriminatorConfig {
        base_channels: base,
        residual_blocks: res,
        ..DiscriminatorConfig::desk((1, 28, 28))
    };
    let pcfg = PerceptualConfig::all_conv_stages("clf", &net);
    let tcfg = DefenseTrainConfig { epochs, seed: 5, ..Default::default() };
    let t1 = Instant::now();
    let (model, logs) = train_defense(
        &pairs,
        &manifest.header.fingerprint,
        &gcfg,
        &dcfg,
        &pcfg,
        &net,
        &tcfg,
        None,
    )
    .unwrap();
    println!(
        "defense trained in {:.0}s ({} epochs, base {}, res {}); last log: l1 {:.4} perc {:.4}",
        t1.elapsed().as_secs_f32(),
        epochs,
        base,
        res,
        logs.last().unwrap().l1,
        logs.last().unwrap().perceptual,
    );

    for (name, cfg) in [("fgsm", &fgsm), ("pgd", &pgd), ("cw", &cw)] {
        let r = run_attack(&net, &ds.test_images, Some(&ds.test_labels), cfg).unwrap();
        let attacked_acc = acc(&net, &r.adversarial, &ds.test_labels);
        let restored = model.reconstruct(&r.adversarial).unwrap();
        let defended_acc = acc(&net, &restored, &ds.test_labels);
        // psnr-style quick check
        let mse = |a: &ImageBatch, b: &ImageBatch| -> f64 {
            a.data()
                .iter()
                .zip(b.data().iter())
                .map(|(&x, &y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                / a.data().len() as f64
        };
        let psnr_att = 10.0 * (1.0 / mse(&r.adversarial, &ds.test_images)).log10();
        let psnr_def = 10.0 * (1.0 / mse(&restored, &ds.test_images)).log10();
        println!(
            "{name}: attacked {attacked_acc:.1}% defended {defended_acc:.1}%  psnr {psnr_att:.1} -> {psnr_def:.1} dB"
        );
    }
    // clean-pass cost
    let restored_clean = model.reconstruct(&ds.test_images).unwrap();
    println!("defense on clean: {:.1}%", acc(&net, &restored_clean, &ds.test_labels));
}
