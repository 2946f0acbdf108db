//! CW parameter tuning probe.
use advlab::attacks::{run_attack, AttackConfig, AttackKind};
use advlab::classifiers::{train_classifier, Arch, ConvNet, ConvNetConfig, TrainConfig};
use advlab::core::{predictions, Classifier};
use advlab::datasets::{load_synthetic, SyntheticSpec};
use std::time::Instant;

fn main() {
    let ds = load_synthetic(SyntheticSpec { train_n: 2000, test_n: 1000, ..Default::default() }).unwrap();
    let mut net = ConvNet::new(
        ConvNetConfig { arch: Arch::ConvNetA, num_classes: 10, input_shape: (1, 28, 28) }, 42).unwrap();
    train_classifier(&mut net, &ds.train_images, &ds.train_labels,
        &TrainConfig { epochs: 6, batch_size: 64, learning_rate: 1e-3, seed: 7 }).unwrap();
    let sub_x = ds.test_images.slice_range(0, 300);
    let sub_y = ds.test_labels.slice_range(0, 300);
    for (c, lr, steps) in [(1.0, 0.01, 100), (5.0, 0.02, 150), (10.0, 0.05, 150), (20.0, 0.05, 200), (50.0, 0.1, 150)] {
        let t = Instant::now();
        let mut cfg = AttackConfig::new(AttackKind::Cw).with_seed(3);
        cfg.cw_constant = c; cfg.cw_learning_rate = lr; cfg.cw_steps = steps;
        let r = run_attack(&net, &sub_x, Some(&sub_y), &cfg).unwrap();
        let preds = predictions(&net.logits(&r.adversarial));
        let acc = preds.iter().zip(sub_y.labels()).filter(|(p, y)| p == y).count() as f64 / 3.0;
        // mean L2 of successful perturbations
        let mut l2s = vec![];
        for i in 0..300 {
            if r.success[i] {
                let d: f32 = r.adversarial.data().slice(ndarray::s![i,..,..,..]).iter()
                    .zip(sub_x.data().slice(ndarray::s![i,..,..,..]).iter())
                    .map(|(&a,&b)| (a-b)*(a-b)).sum();
                l2s.push(d.sqrt());
            }
        }
        let mean_l2 = l2s.iter().sum::<f32>() / l2s.len().max(1) as f32;
        println!("c={c} lr={lr} steps={steps}: acc {acc:.1}%  mean_l2 {mean_l2:.3}  ({:.1}s)", t.elapsed().as_secs_f32());
    }
}
