//! Scratch probe for sizing: classifier accuracy on synthetic digits and
//! attack effectiveness. Not part of the test suite.

use advlab::attacks::{run_attack, AttackConfig, AttackKind};
use advlab::classifiers::{train_classifier, Arch, ConvNet, ConvNetConfig, TrainConfig};
use advlab::core::{predictions, Classifier};
use advlab::datasets::{load_synthetic, SyntheticSpec};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let ds = load_synthetic(SyntheticSpec {
        train_n: 2000,
        test_n: 1000,
        ..Default::default()
    })
    .unwrap();
    println!("dataset generated in {:.1}s", t0.elapsed().as_secs_f32());

    let mut net = ConvNet::new(
        ConvNetConfig { arch: Arch::ConvNetA, num_classes: 10, input_shape: (1, 28, 28) },
        42,
    )
    .unwrap();
    let t1 = Instant::now();
    let hist = train_classifier(
        &mut net,
        &ds.train_images,
        &ds.train_labels,
        &TrainConfig { epochs: 6, batch_size: 64, learning_rate: 1e-3, seed: 7 },
    )
    .unwrap();
    println!(
        "training took {:.1}s, final train acc {:.3}",
        t1.elapsed().as_secs_f32(),
        hist.last().unwrap().train_accuracy
    );

    let preds = predictions(&net.logits(&ds.test_images));
    let acc = preds
        .iter()
        .zip(ds.test_labels.labels())
        .filter(|(p, y)| p == y)
        .count() as f64
        / preds.len() as f64;
    println!("clean test accuracy: {:.1}%", acc * 100.0);

    for kind in [
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Cw,
        AttackKind::DeepFool,
        AttackKind::Square,
        AttackKind::MiFgsm,
        AttackKind::Bim,
    ] {
        let t = Instant::now();
        let mut cfg = AttackConfig::new(kind).with_epsilon(0.3).with_seed(3);
        if kind == AttackKind::Bim {
            cfg.random_start = false;
        }
        if kind == AttackKind::Square {
            cfg.iterations = 600;
        }
        let sub_x = ds.test_images.slice_range(0, 300);
        let sub_y = ds.test_labels.slice_range(0, 300);
        let r = run_attack(&net, &sub_x, Some(&sub_y), &cfg).unwrap();
        let preds = predictions(&net.logits(&r.adversarial));
        let acc = preds.iter().zip(sub_y.labels()).filter(|(p, y)| p == y).count() as f64 / 300.0;
        println!(
            "{kind}: attacked accuracy {:.1}%  (success rate {:.2}, {:.1}s)",
            acc * 100.0,
            r.success_rate(),
            t.elapsed().as_secs_f32()
        );
    }
}
