//! Command implementations: thin orchestration over the library modules,
//! with run-directory bookkeeping.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use advlab::attacks::{AttackConfig, AttackKind};
use advlab::classifiers::{
    load_classifier, save_classifier, train_classifier as fit_classifier, Arch,
    ClassifierCheckpointMeta, ConvNet, ConvNetConfig, TrainConfig,
};
use advlab::core::ImageBatch;
use advlab::datasets::{
    build_adversarial_dataset, export_png as png_export, load_dataset, load_pairs, save_pairs,
    BuildMode, Dataset, SyntheticSpec,
};
use advlab::defense::{
    load_defense, save_defense, train_defense as fit_defense, DefenseModel, DefenseTrainConfig,
    DiscriminatorConfig, GeneratorConfig, PerceptualConfig,
};
use advlab::eval::{
    ablation_figures, ablation_residual_blocks, cross_model_transfer, default_sweep_grids,
    defense_table, generalizability_matrix, line_chart, robustness_sweep, table_attacks,
    EvalContext, EvaluationReport, Series, TensorPath,
};
use advlab::rundir::RunDir;

use crate::config::merge_config;
use crate::Common;

fn require_run_dir(common: &Common) -> Result<RunDir> {
    let dir = common
        .run_dir
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--run-dir is required for this command"))?;
    Ok(RunDir::create(&dir, common.overwrite)?)
}

fn resolve_dataset(
    common: &Common,
    name: Option<&str>,
    train_subset: Option<usize>,
    test_subset: Option<usize>,
) -> Result<Dataset> {
    let name = name.unwrap_or("synthetic");
    let seed = common.seed.unwrap_or(0);
    let spec = SyntheticSpec {
        train_n: train_subset.unwrap_or(4000).max(train_subset.unwrap_or(4000)),
        test_n: test_subset.unwrap_or(1500),
        seed: seed ^ 0x5EED_DA7A,
        ..Default::default()
    };
    let ds = load_dataset(name, common.data_root.as_deref(), spec)?;
    Ok(match (train_subset, test_subset) {
        (None, None) => ds,
        (tr, te) => ds.subset(
            tr.unwrap_or(ds.train_images.len()),
            te.unwrap_or(ds.test_images.len()),
            seed ^ 0x5B5E7,
        ),
    })
}

fn parse_attack_list(spec: &str) -> Result<Vec<AttackKind>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Ok(AttackKind::parse(s.trim())?))
        .collect()
}

/// Per-kind config with the evaluation-tuned C&W settings and the CLI's
/// ε / iteration / step-size overrides applied.
fn attack_config(
    kind: AttackKind,
    epsilon: f32,
    iters: Option<usize>,
    alpha: Option<f32>,
    seed: u64,
) -> AttackConfig {
    let mut cfg = AttackConfig::new(kind).with_epsilon(epsilon);
    cfg.seed = seed ^ (kind.id().bytes().fold(0u64, |a, b| a.rotate_left(7) ^ b as u64));
    if kind == AttackKind::Cw {
        cfg.cw_constant = 5.0;
        cfg.cw_learning_rate = 0.02;
        cfg.cw_steps = iters.unwrap_or(150);
    } else if let Some(i) = iters {
        cfg.iterations = i;
    }
    if let Some(a) = alpha {
        cfg.step_size = a;
    }
    cfg
}

fn print_report(report: &EvaluationReport) {
    println!(
        "{:<12} {:>8} {:<10} {:>9} {:>9} {:>9}",
        "attack", "epsilon", "defense", "acc %", "psnr dB", "mae"
    );
    for row in &report.rows {
        println!(
            "{:<12} {:>8} {:<10} {:>9.1} {:>9} {:>9}",
            row.attack,
            row.epsilon.map(|e| format!("{e:.3}")).unwrap_or_else(|| "-".into()),
            row.defense_id.as_deref().map(|d| &d[..8.min(d.len())]).unwrap_or("-"),
            row.accuracy,
            row.psnr_db.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            row.mae.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
}

// ---------------------------------------------------------------------------
// train-classifier
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// mnist | fashion-mnist | cifar10 | synthetic
    #[arg(long)]
    dataset: Option<String>,
    /// convnet-a | convnet-b
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Seeded subset of the training split.
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
}

pub fn train_classifier(args: TrainClassifierArgs) -> Result<()> {
    let args: TrainClassifierArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let epochs = args.epochs.unwrap_or(6);
    if epochs == 0 {
        bail!("--epochs must be >= 1");
    }
    let seed = args.common.seed.unwrap_or(0);
    let ds = resolve_dataset(&args.common, args.dataset.as_deref(), args.train_subset, args.test_subset)?;
    let arch = Arch::parse(args.arch.as_deref().unwrap_or("convnet-a"))?;
    let mut model = ConvNet::new(
        ConvNetConfig {
            arch,
            num_classes: ds.num_classes(),
            input_shape: ds.image_shape(),
        },
        seed,
    )?;
    let tcfg = TrainConfig {
        epochs,
        batch_size: args.batch_size.unwrap_or(64),
        learning_rate: args.learning_rate.unwrap_or(1e-3),
        seed,
    };
    let history = fit_classifier(&mut model, &ds.train_images, &ds.train_labels, &tcfg)?;
    let clean_acc = advlab::eval::accuracy(&model, &ds.test_images, &ds.test_labels)?;
    let ckpt_dir = run.subdir("checkpoints")?;
    let path = ckpt_dir.join("classifier.ckpt");
    save_classifier(
        &path,
        &model,
        &ClassifierCheckpointMeta {
            config: model.config().clone(),
            seed,
            epochs,
            clean_test_accuracy: Some(clean_acc),
            dataset: Some(ds.name.clone()),
        },
    )?;
    println!(
        "trained {} on {} ({} train / {} test): clean test accuracy {clean_acc:.1}% \
         (final train loss {:.4})",
        arch.id(),
        ds.name,
        ds.train_images.len(),
        ds.test_images.len(),
        history.last().map(|h| h.mean_loss).unwrap_or(f64::NAN),
    );
    println!("checkpoint: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct AttackArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Classifier checkpoint to attack.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// train | test
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated attack kinds.
    #[arg(long)]
    attacks: Option<String>,
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    alpha: Option<f32>,
    /// cross-product | partition
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    subset: Option<usize>,
}

pub fn attack(args: AttackArgs) -> Result<()> {
    let args: AttackArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let ckpt = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--checkpoint <classifier.ckpt> is required"))?;
    let (model, meta) = load_classifier(ckpt)?;
    let subset = args.subset;
    let ds = resolve_dataset(&args.common, args.dataset.as_deref(), subset, subset)?;
    let split = args.split.as_deref().unwrap_or("train");
    let (images, labels) = match split {
        "train" => (&ds.train_images, &ds.train_labels),
        "test" => (&ds.test_images, &ds.test_labels),
        other => bail!("unknown split '{other}' (expected train or test)"),
    };
    let kinds = parse_attack_list(args.attacks.as_deref().unwrap_or("fgsm,pgd,cw"))?;
    if kinds.is_empty() {
        bail!("attack list is empty");
    }
    let epsilon = args.epsilon.unwrap_or(16.0 / 255.0);
    let configs: Vec<AttackConfig> = kinds
        .iter()
        .map(|&k| attack_config(k, epsilon, args.iters, args.alpha, seed))
        .collect();
    let mode = match args.mode.as_deref().unwrap_or("cross-product") {
        "cross-product" | "cross_product" => BuildMode::CrossProduct,
        "partition" => BuildMode::Partition,
        other => bail!("unknown mode '{other}' (expected cross-product or partition)"),
    };
    let (pairs, manifest) = build_adversarial_dataset(
        &model,
        meta.config.arch.id(),
        images,
        labels,
        &configs,
        mode,
        seed,
        &ds.name,
        split,
    )?;
    let pairs_dir = run.subdir("pairs")?;
    save_pairs(&pairs_dir, &pairs, &manifest)?;
    println!(
        "built {} pairs from {} {} images ({} mode), fingerprint {}",
        pairs.len(),
        images.len(),
        split,
        if mode == BuildMode::CrossProduct { "cross-product" } else { "partition" },
        &manifest.header.fingerprint[..12],
    );
    for kind in &kinds {
        let records: Vec<_> =
            manifest.records.iter().filter(|r| r.attack == kind.id()).collect();
        let fooled = records.iter().filter(|r| r.success == Some(true)).count();
        println!(
            "  {}: fooling rate {:.1}% over {} images",
            kind,
            100.0 * fooled as f64 / records.len().max(1) as f64,
            records.len()
        );
    }
    println!("pairs directory: {}", pairs_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-defense
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TrainDefenseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Directory written by `advlab attack` (pairs + manifest).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Classifier checkpoint used as the frozen perceptual feature network.
    #[arg(long)]
    feature_network: Option<PathBuf>,
    /// Residual blocks per encoder/discriminator level.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    lambda1: Option<f32>,
    #[arg(long)]
    lambda2: Option<f32>,
}

pub fn train_defense(args: TrainDefenseArgs) -> Result<()> {
    let args: TrainDefenseArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let pairs_dir = args
        .pairs
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--pairs <dir> is required (see `advlab attack`)"))?;
    let (pairs, manifest) = load_pairs(pairs_dir)?;
    let feature_ckpt = args.feature_network.as_deref().ok_or_else(|| {
        anyhow::anyhow!("--feature-network <classifier.ckpt> is required (frozen extractor)")
    })?;
    let (feature_net, _) = load_classifier(feature_ckpt)?;

    let shape = pairs.adversarial.image_shape();
    let mut gcfg = GeneratorConfig::desk(shape);
    if let Some(b) = args.blocks {
        gcfg.residual_blocks = b;
    }
    if let Some(c) = args.base_channels {
        gcfg.base_channels = c;
    }
    let mut dcfg = DiscriminatorConfig::desk(shape);
    dcfg.residual_blocks = gcfg.residual_blocks;
    if let Some(c) = args.base_channels {
        dcfg.base_channels = c;
    }
    let pcfg = PerceptualConfig::all_conv_stages(&feature_net.fingerprint()[..12], &feature_net);
    let tcfg = DefenseTrainConfig {
        epochs: args.epochs.unwrap_or(8),
        batch_size: args.batch_size.unwrap_or(64),
        learning_rate: args.learning_rate.unwrap_or(2e-4),
        lambda1: args.lambda1.unwrap_or(100.0),
        lambda2: args.lambda2.unwrap_or(1.0),
        seed,
        ..Default::default()
    };
    let log_path = run.subdir("logs")?.join("defense_train.jsonl");
    let (model, logs) = fit_defense(
        &pairs,
        &manifest.header.fingerprint,
        &gcfg,
        &dcfg,
        &pcfg,
        &feature_net,
        &tcfg,
        Some(&log_path),
    )?;
    let ckpt_path = run.subdir("checkpoints")?.join("defense.ckpt");
    save_defense(&ckpt_path, &model)?;

    // loss curves from the run log
    let figures = run.subdir("figures")?;
    let curve = |f: fn(&advlab::defense::EpochLog) -> f64, name: &str| Series {
        name: name.into(),
        points: logs.iter().map(|l| (l.epoch as f64, f(l))).collect(),
    };
    line_chart(
        &figures.join("defense_losses.svg"),
        "Training losses per epoch",
        "epoch",
        "loss",
        &[
            curve(|l| l.l1, "l1"),
            curve(|l| l.perceptual, "perceptual"),
            curve(|l| l.gen_adv, "generator adv"),
            curve(|l| l.disc, "discriminator"),
        ],
        None,
    )?;
    let last = logs.last().unwrap();
    println!(
        "defense trained on {} pairs ({} epochs, {} residual blocks): l1 {:.4} perceptual {:.4} \
         gen_adv {:.4} disc {:.4}",
        pairs.len(),
        tcfg.epochs,
        gcfg.residual_blocks,
        last.l1,
        last.perceptual,
        last.gen_adv,
        last.disc
    );
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Defense checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input tensor file (N, C, H, W).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output tensor file.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let args: ReconstructArgs = merge_config(&args, args.common.config.as_deref())?;
    let ckpt = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--checkpoint <defense.ckpt> is required"))?;
    let input = args.input.as_deref().ok_or_else(|| anyhow::anyhow!("--input is required"))?;
    let output = args.output.as_deref().ok_or_else(|| anyhow::anyhow!("--output is required"))?;
    let model = load_defense(ckpt)?;
    let tensor = advlab::datasets::load_f32(input)?;
    let batch = ImageBatch::new(
        tensor.into_dimensionality::<ndarray::Ix4>().context("input tensor must be rank 4")?,
    )?;
    let restored = model.reconstruct(&batch)?;
    advlab::datasets::save_f32(output, restored.data().view().into_dyn())?;
    println!("reconstructed {} images -> {}", batch.len(), output.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    epsilon: Option<f32>,
    /// Route the test tensors through 8-bit PNG files before evaluating.
    /// The report is tagged as quantized; off by default.
    #[arg(long, default_value_t = false)]
    #[serde(default)]
    png_roundtrip: bool,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let args: EvaluateArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let clf_path = args
        .classifier
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--classifier <classifier.ckpt> is required"))?;
    let def_path = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--checkpoint <defense.ckpt> is required"))?;
    let (classifier, meta) = load_classifier(clf_path)?;
    let defense = load_defense(def_path)?;
    let ds = resolve_dataset(&args.common, args.dataset.as_deref(), args.subset, args.subset)?;
    let (test_images, tensor_path) = if args.png_roundtrip {
        let dir = run.subdir("png-roundtrip")?;
        let paths = png_export(&ds.test_images, &dir, "test")?;
        (advlab::datasets::import_png(&paths)?, TensorPath::PngQuantized)
    } else {
        (ds.test_images.clone(), TensorPath::BitExact)
    };
    let ctx = EvalContext {
        classifier: &classifier,
        model_id: meta.config.arch.id().into(),
        dataset: ds.name.clone(),
        test_images: &test_images,
        test_labels: &ds.test_labels,
        seed,
    };
    let attacks = table_attacks(args.epsilon.unwrap_or(0.3), seed);
    let mut report = defense_table(&ctx, &defense, &attacks)?;
    report.provenance.tensor_path = Some(tensor_path);
    let reports = run.subdir("reports")?;
    report.write_jsonl(&reports.join("defense_table.jsonl"))?;
    report.write_csv(&reports.join("defense_table.csv"))?;
    print_report(&report);
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    subset: Option<usize>,
    /// Comma-separated subset of {pgd, mifgsm}.
    #[arg(long)]
    attacks: Option<String>,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let args: SweepArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let (classifier, meta) = load_classifier(
        args.classifier
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--classifier is required"))?,
    )?;
    let defense = load_defense(
        args.checkpoint
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--checkpoint <defense.ckpt> is required"))?,
    )?;
    let subset = args.subset.or(Some(300));
    let ds = resolve_dataset(&args.common, args.dataset.as_deref(), subset, subset)?;
    let kinds = parse_attack_list(args.attacks.as_deref().unwrap_or("pgd,mifgsm"))?;
    let (iters, epsilons) = default_sweep_grids();
    let ctx = EvalContext {
        classifier: &classifier,
        model_id: meta.config.arch.id().into(),
        dataset: ds.name.clone(),
        test_images: &ds.test_images,
        test_labels: &ds.test_labels,
        seed,
    };
    let figures = run.subdir("figures")?;
    let report = robustness_sweep(&ctx, &defense, &kinds, &iters, &epsilons, Some(&figures))?;
    report.write_json(&run.subdir("reports")?.join("sweep.json"))?;
    println!(
        "{} cells ({} attacks x {} epsilons x {} iteration counts)",
        report.cells.len(),
        kinds.len(),
        epsilons.len(),
        iters.len()
    );
    for kind in &kinds {
        for &eps in &epsilons {
            let line = report.line(*kind, eps);
            let accs: Vec<f64> = line.iter().map(|(_, a)| *a).collect();
            let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "  {kind} eps {:.3}: defended accuracy {:.1}%..{:.1}% (band {:.1} points)",
                eps,
                min,
                max,
                max - min
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// matrix
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct MatrixArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    /// Epochs per single-attack defense model.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    blocks: Option<usize>,
}

pub fn matrix(args: MatrixArgs) -> Result<()> {
    let args: MatrixArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let (classifier, meta) = load_classifier(
        args.classifier
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--classifier is required"))?,
    )?;
    let ds = resolve_dataset(
        &args.common,
        args.dataset.as_deref(),
        Some(args.train_subset.unwrap_or(1200)),
        Some(args.test_subset.unwrap_or(800)),
    )?;
    let epsilon = args.epsilon.unwrap_or(0.3);
    let epochs = args.epochs.unwrap_or(6);
    let blocks = args.blocks.unwrap_or(7);

    // six training attacks; deepfool is held out as the unknown attack
    let training_kinds = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Pgd,
        AttackKind::MiFgsm,
        AttackKind::Cw,
        AttackKind::AutoComposite,
    ];
    let shape = ds.image_shape();
    let gcfg = GeneratorConfig::desk(shape).with_residual_blocks(blocks);
    let mut dcfg = DiscriminatorConfig::desk(shape);
    dcfg.residual_blocks = blocks;
    let pcfg = PerceptualConfig::all_conv_stages(&classifier.fingerprint()[..12], &classifier);
    let tcfg = DefenseTrainConfig { epochs, seed, ..Default::default() };

    let mut models: Vec<(String, Option<String>, DefenseModel)> = Vec::new();
    for kind in training_kinds {
        let cfg = attack_config(kind, epsilon, None, None, seed);
        let (pairs, manifest) = build_adversarial_dataset(
            &classifier,
            meta.config.arch.id(),
            &ds.train_images,
            &ds.train_labels,
            &[cfg],
            BuildMode::CrossProduct,
            seed,
            &ds.name,
            "train",
        )?;
        log::info!("training model_{kind} on {} pairs", pairs.len());
        let (model, _) = fit_defense(
            &pairs,
            &manifest.header.fingerprint,
            &gcfg,
            &dcfg,
            &pcfg,
            &classifier,
            &tcfg,
            None,
        )?;
        models.push((format!("model_{kind}"), Some(kind.id().to_string()), model));
    }
    // combined model over all six attacks (one pass each)
    {
        let configs: Vec<AttackConfig> = training_kinds
            .iter()
            .map(|&k| attack_config(k, epsilon, None, None, seed))
            .collect();
        let (pairs, manifest) = build_adversarial_dataset(
            &classifier,
            meta.config.arch.id(),
            &ds.train_images,
            &ds.train_labels,
            &configs,
            BuildMode::Partition,
            seed,
            &ds.name,
            "train",
        )?;
        log::info!("training model_combined on {} pairs", pairs.len());
        let (model, _) = fit_defense(
            &pairs,
            &manifest.header.fingerprint,
            &gcfg,
            &dcfg,
            &pcfg,
            &classifier,
            &tcfg,
            None,
        )?;
        models.push(("model_combined".into(), None, model));
    }

    let mut conditions: Vec<(String, Option<AttackConfig>)> = vec![("clean".into(), None)];
    for kind in training_kinds {
        conditions.push((kind.id().into(), Some(attack_config(kind, epsilon, None, None, seed))));
    }
    conditions.push((
        AttackKind::DeepFool.id().into(),
        Some(attack_config(AttackKind::DeepFool, epsilon, None, None, seed)),
    ));

    let ctx = EvalContext {
        classifier: &classifier,
        model_id: meta.config.arch.id().into(),
        dataset: ds.name.clone(),
        test_images: &ds.test_images,
        test_labels: &ds.test_labels,
        seed,
    };
    let refs: Vec<(String, Option<String>, &DefenseModel)> =
        models.iter().map(|(n, t, m)| (n.clone(), t.clone(), m)).collect();
    let matrix = generalizability_matrix(&ctx, &refs, &conditions)?;
    let reports = run.subdir("reports")?;
    matrix.write_json(&reports.join("matrix.json"))?;
    matrix.write_csv(&reports.join("matrix.csv"))?;
    for ckpt_dir in [run.subdir("checkpoints")?] {
        for (name, _, model) in &models {
            save_defense(&ckpt_dir.join(format!("{name}.ckpt")), model)?;
        }
    }
    println!(
        "{} models x {} conditions; accuracy grid written to {}",
        matrix.models.len(),
        matrix.conditions.len(),
        reports.join("matrix.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated residual-block counts.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epsilon: Option<f32>,
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let args: AblateArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let (classifier, meta) = load_classifier(
        args.classifier
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--classifier is required"))?,
    )?;
    let ds = resolve_dataset(
        &args.common,
        args.dataset.as_deref(),
        Some(args.train_subset.unwrap_or(600)),
        Some(args.test_subset.unwrap_or(600)),
    )?;
    let blocks: Vec<usize> = args
        .blocks
        .as_deref()
        .unwrap_or("0,1,3,5,7")
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("parsing --blocks"))
        .collect::<Result<_>>()?;
    let epsilon = args.epsilon.unwrap_or(0.3);
    let attacks = table_attacks(epsilon, seed);
    let (pairs, manifest) = build_adversarial_dataset(
        &classifier,
        meta.config.arch.id(),
        &ds.train_images,
        &ds.train_labels,
        &attacks,
        BuildMode::CrossProduct,
        seed,
        &ds.name,
        "train",
    )?;
    let shape = ds.image_shape();
    let gcfg = GeneratorConfig::desk(shape);
    let dcfg = DiscriminatorConfig::desk(shape);
    let pcfg = PerceptualConfig::all_conv_stages(&classifier.fingerprint()[..12], &classifier);
    let tcfg = DefenseTrainConfig { epochs: args.epochs.unwrap_or(4), seed, ..Default::default() };
    let ctx = EvalContext {
        classifier: &classifier,
        model_id: meta.config.arch.id().into(),
        dataset: ds.name.clone(),
        test_images: &ds.test_images,
        test_labels: &ds.test_labels,
        seed,
    };
    let (report, timings) = ablation_residual_blocks(
        &ctx,
        &pairs,
        &manifest.header.fingerprint,
        &blocks,
        &gcfg,
        &dcfg,
        &pcfg,
        &classifier,
        &tcfg,
        &attacks,
    )?;
    let reports = run.subdir("reports")?;
    report.write_json(&reports.join("ablation.json"))?;
    // wall times live in their own file so the report stays deterministic
    std::fs::write(
        reports.join("ablation_timings.json"),
        serde_json::to_string_pretty(&timings)? + "\n",
    )?;
    ablation_figures(&report, &timings, &run.subdir("figures")?)?;
    println!("{:<8} {:>10} {:>12} {}", "blocks", "time (s)", "final l1", "defended accuracy");
    for (arm, t) in report.arms.iter().zip(&timings) {
        let accs: Vec<String> = arm
            .defended_accuracy
            .iter()
            .map(|(k, a)| format!("{k} {a:.1}%"))
            .collect();
        println!(
            "{:<8} {:>10.1} {:>12.4} {}",
            arm.residual_blocks,
            t.train_seconds,
            arm.final_l1,
            if arm.diverged { "DIVERGED".into() } else { accs.join("  ") }
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// export-png
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct ExportPngArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Input tensor file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for the PNG files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    prefix: Option<String>,
}

pub fn export_png(args: ExportPngArgs) -> Result<()> {
    let args: ExportPngArgs = merge_config(&args, args.common.config.as_deref())?;
    let input = args.input.as_deref().ok_or_else(|| anyhow::anyhow!("--input is required"))?;
    let out_dir =
        args.out_dir.as_deref().ok_or_else(|| anyhow::anyhow!("--out-dir is required"))?;
    let tensor = advlab::datasets::load_f32(input)?;
    let batch = ImageBatch::new(
        tensor.into_dimensionality::<ndarray::Ix4>().context("input tensor must be rank 4")?,
    )?;
    let paths = png_export(&batch, out_dir, args.prefix.as_deref().unwrap_or("img"))?;
    println!("wrote {} png files under {}", paths.len(), out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// make-paper-figures
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct MakePaperFiguresArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    /// Epochs for the main (combined) defense model.
    #[arg(long)]
    defense_epochs: Option<usize>,
    /// Epochs per matrix arm.
    #[arg(long)]
    matrix_epochs: Option<usize>,
    /// Training-subset size per matrix arm.
    #[arg(long)]
    matrix_subset: Option<usize>,
    /// Skip the (slow) generalizability-matrix stage.
    #[arg(long, default_value_t = false)]
    #[serde(default)]
    skip_matrix: bool,
}

pub fn make_paper_figures(args: MakePaperFiguresArgs) -> Result<()> {
    let args: MakePaperFiguresArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let ds = resolve_dataset(
        &args.common,
        args.dataset.as_deref(),
        Some(args.train_subset.unwrap_or(2000)),
        Some(args.test_subset.unwrap_or(1000)),
    )?;

    // 1. classifier
    println!("[1/5] training classifier");
    let mut classifier = ConvNet::new(
        ConvNetConfig {
            arch: Arch::ConvNetA,
            num_classes: ds.num_classes(),
            input_shape: ds.image_shape(),
        },
        seed,
    )?;
    let history = fit_classifier(
        &mut classifier,
        &ds.train_images,
        &ds.train_labels,
        &TrainConfig { epochs: 6, seed, ..Default::default() },
    )?;
    let clean_acc = advlab::eval::accuracy(&classifier, &ds.test_images, &ds.test_labels)?;
    println!(
        "  clean test accuracy {clean_acc:.1}% (final train loss {:.4})",
        history.last().unwrap().mean_loss
    );
    save_classifier(
        &run.subdir("checkpoints")?.join("classifier.ckpt"),
        &classifier,
        &ClassifierCheckpointMeta {
            config: classifier.config().clone(),
            seed,
            epochs: 6,
            clean_test_accuracy: Some(clean_acc),
            dataset: Some(ds.name.clone()),
        },
    )?;

    // 2. combined dataset + defense
    println!("[2/5] building the combined adversarial dataset and training the defense");
    let (pairs, manifest) = advlab::eval::build_combined_pairs(
        &classifier,
        "convnet-a",
        &ds.train_images,
        &ds.train_labels,
        0.3,
        seed,
        &ds.name,
    )?;
    save_pairs(&run.subdir("pairs")?, &pairs, &manifest)?;
    let shape = ds.image_shape();
    let gcfg = GeneratorConfig::desk(shape);
    let dcfg = DiscriminatorConfig::desk(shape);
    let pcfg = PerceptualConfig::all_conv_stages(&classifier.fingerprint()[..12], &classifier);
    let tcfg = DefenseTrainConfig {
        epochs: args.defense_epochs.unwrap_or(8),
        seed,
        ..Default::default()
    };
    let (defense, _) = fit_defense(
        &pairs,
        &manifest.header.fingerprint,
        &gcfg,
        &dcfg,
        &pcfg,
        &classifier,
        &tcfg,
        Some(&run.subdir("logs")?.join("defense_train.jsonl")),
    )?;
    save_defense(&run.subdir("checkpoints")?.join("defense.ckpt"), &defense)?;

    // 3. defense table
    println!("[3/5] defense table");
    let ctx = EvalContext {
        classifier: &classifier,
        model_id: "convnet-a".into(),
        dataset: ds.name.clone(),
        test_images: &ds.test_images,
        test_labels: &ds.test_labels,
        seed,
    };
    let attacks = table_attacks(0.3, seed);
    let table = defense_table(&ctx, &defense, &attacks)?;
    let reports = run.subdir("reports")?;
    table.write_jsonl(&reports.join("defense_table.jsonl"))?;
    table.write_csv(&reports.join("defense_table.csv"))?;
    print_report(&table);

    // 4. restoration-quality figure (PSNR / MAE per attack)
    println!("[4/5] restoration-quality figure");
    let figures = run.subdir("figures")?;
    let mut psnr_attacked = Vec::new();
    let mut psnr_restored = Vec::new();
    let mut mae_attacked = Vec::new();
    let mut mae_restored = Vec::new();
    let defense_fp = defense.fingerprint();
    for (i, cfg) in attacks.iter().enumerate() {
        let x = i as f64;
        let att = table.row(cfg.kind.id(), None).unwrap();
        let def = table.row(cfg.kind.id(), Some(defense_fp.as_str())).unwrap();
        psnr_attacked.push((x, att.psnr_db.unwrap_or(0.0)));
        psnr_restored.push((x, def.psnr_db.unwrap_or(0.0)));
        mae_attacked.push((x, att.mae.unwrap_or(0.0)));
        mae_restored.push((x, def.mae.unwrap_or(0.0)));
    }
    line_chart(
        &figures.join("quality_psnr.svg"),
        "PSNR vs clean (0=fgsm, 1=pgd, 2=cw)",
        "attack",
        "PSNR (dB)",
        &[
            Series { name: "attacked".into(), points: psnr_attacked },
            Series { name: "restored".into(), points: psnr_restored },
        ],
        None,
    )?;
    line_chart(
        &figures.join("quality_mae.svg"),
        "MAE vs clean (0=fgsm, 1=pgd, 2=cw)",
        "attack",
        "MAE",
        &[
            Series { name: "attacked".into(), points: mae_attacked },
            Series { name: "restored".into(), points: mae_restored },
        ],
        None,
    )?;

    // 5. robustness sweep (+ optional matrix)
    println!("[5/5] robustness sweep");
    let sweep_ds = ds.subset(1, 300.min(ds.test_images.len()), seed ^ 0x51);
    let sweep_ctx = EvalContext {
        classifier: &classifier,
        model_id: "convnet-a".into(),
        dataset: ds.name.clone(),
        test_images: &sweep_ds.test_images,
        test_labels: &sweep_ds.test_labels,
        seed,
    };
    let (iters, epsilons) = default_sweep_grids();
    let sweep_report = robustness_sweep(
        &sweep_ctx,
        &defense,
        &[AttackKind::Pgd, AttackKind::MiFgsm],
        &iters,
        &epsilons,
        Some(&figures),
    )?;
    sweep_report.write_json(&reports.join("sweep.json"))?;

    if !args.skip_matrix {
        println!("[extra] generalizability matrix (reduced arms)");
        let margs = MatrixArgs {
            common: Common {
                run_dir: Some(run.path("matrix")),
                overwrite: true,
                config: None,
                data_root: args.common.data_root.clone(),
                seed: Some(seed),
            },
            classifier: Some(run.path("checkpoints/classifier.ckpt")),
            dataset: args.dataset.clone(),
            train_subset: Some(args.matrix_subset.unwrap_or(800)),
            test_subset: Some(500),
            epochs: Some(args.matrix_epochs.unwrap_or(4)),
            epsilon: Some(0.3),
            blocks: Some(7),
        };
        matrix(margs)?;
    }
    println!("artifacts under {}", run.root().display());
    Ok(())
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TransferArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Defense checkpoint (trained against the source model's attacks).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Source model id recorded in the transfer rows.
    #[arg(long)]
    source_model: Option<String>,
    /// Comma-separated classifier checkpoints to attack and defend.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    epsilon: Option<f32>,
}

pub fn transfer(args: TransferArgs) -> Result<()> {
    let args: TransferArgs = merge_config(&args, args.common.config.as_deref())?;
    let run = require_run_dir(&args.common)?;
    run.write_effective_config(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let defense = load_defense(
        args.checkpoint
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--checkpoint <defense.ckpt> is required"))?,
    )?;
    let target_spec = args
        .targets
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--targets <a.ckpt,b.ckpt> is required"))?;
    let mut loaded = Vec::new();
    for path in target_spec.split(',').filter(|s| !s.trim().is_empty()) {
        let (model, meta) = load_classifier(std::path::Path::new(path.trim()))?;
        loaded.push((model, meta.config.arch.id().to_string()));
    }
    if loaded.is_empty() {
        bail!("no target classifiers given");
    }
    let ds = resolve_dataset(&args.common, args.dataset.as_deref(), args.subset, args.subset)?;
    let attacks = table_attacks(args.epsilon.unwrap_or(0.3), seed);
    let targets: Vec<(&ConvNet, String)> =
        loaded.iter().enumerate().map(|(i, (m, id))| (m, format!("{id}#{i}"))).collect();
    let report = cross_model_transfer(
        &defense,
        args.source_model.as_deref().unwrap_or("convnet-a"),
        &targets,
        &attacks,
        &ds.name,
        &ds.test_images,
        &ds.test_labels,
        seed,
    )?;
    let reports = run.subdir("reports")?;
    report.write_jsonl(&reports.join("transfer.jsonl"))?;
    report.write_csv(&reports.join("transfer.csv"))?;
    print_report(&report);
    Ok(())
}
