//! Experiment protocols: the defense table, generalizability matrix,
//! cross-model transfer, robustness sweep, and the residual-block ablation.
//!
//! Protocols take in-memory artifacts (classifiers, defense models, clean
//! splits) and return typed reports; all randomness is derived from the
//! caller's seed. Every evaluation here runs on in-memory tensors — the
//! bit-exact path.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, generalizability, mae, psnr};
use super::plots::{line_chart, Series};
use super::report::{EvaluationReport, Provenance, ReportRow, TensorPath};
use crate::attacks::{run_attack, AttackConfig, AttackKind};
use crate::classifiers::ConvNet;
use crate::core::{ImageBatch, LabelBatch};
use crate::datasets::{build_adversarial_dataset, BuildMode, PairSet};
use crate::defense::{
    train_defense, DefenseModel, DefenseTrainConfig, DiscriminatorConfig, FeatureExtractor,
    GeneratorConfig, PerceptualConfig,
};
use crate::error::{AdvError, Result};

/// Inputs shared by the evaluation protocols.
pub struct EvalContext<'a> {
    pub classifier: &'a ConvNet,
    pub model_id: String,
    pub dataset: String,
    pub test_images: &'a ImageBatch,
    pub test_labels: &'a LabelBatch,
    pub seed: u64,
}

fn metric_pair(
    clean: &ImageBatch,
    other: &ImageBatch,
) -> Result<(Option<f64>, usize, Option<f64>)> {
    let stats = psnr(other, clean)?;
    let m = mae(other, clean)?;
    Ok((stats.mean_db, stats.infinite_count, Some(m)))
}

/// Defense table: {clean, attacked, defended} rows per attack kind, with
/// accuracy, PSNR, and MAE against the clean test images.
pub fn defense_table(
    ctx: &EvalContext<'_>,
    defense: &DefenseModel,
    attacks: &[AttackConfig],
) -> Result<EvaluationReport> {
    let defense_id = defense.fingerprint();
    let mut report = EvaluationReport::new(Provenance {
        seed: ctx.seed,
        manifests: vec![],
        checkpoints: vec![defense_id.clone()],
        tensor_path: Some(TensorPath::BitExact),
    });
    let n = ctx.test_images.len();
    report.rows.push(ReportRow {
        dataset: ctx.dataset.clone(),
        attack: "clean".into(),
        epsilon: None,
        model_id: ctx.model_id.clone(),
        defense_id: None,
        accuracy: accuracy(ctx.classifier, ctx.test_images, ctx.test_labels)?,
        psnr_db: None,
        psnr_inf_excluded: 0,
        mae: None,
        n_images: n,
        defense_source_model: None,
    });
    for cfg in attacks {
        let result = run_attack(ctx.classifier, ctx.test_images, Some(ctx.test_labels), cfg)?;
        let (psnr_db, inf, mae_v) = metric_pair(ctx.test_images, &result.adversarial)?;
        report.rows.push(ReportRow {
            dataset: ctx.dataset.clone(),
            attack: cfg.kind.id().into(),
            epsilon: Some(cfg.budget.epsilon),
            model_id: ctx.model_id.clone(),
            defense_id: None,
            accuracy: accuracy(ctx.classifier, &result.adversarial, ctx.test_labels)?,
            psnr_db,
            psnr_inf_excluded: inf,
            mae: mae_v,
            n_images: n,
            defense_source_model: None,
        });
        let restored = defense.reconstruct(&result.adversarial)?;
        let (psnr_db, inf, mae_v) = metric_pair(ctx.test_images, &restored)?;
        report.rows.push(ReportRow {
            dataset: ctx.dataset.clone(),
            attack: cfg.kind.id().into(),
            epsilon: Some(cfg.budget.epsilon),
            model_id: ctx.model_id.clone(),
            defense_id: Some(defense_id.clone()),
            accuracy: accuracy(ctx.classifier, &restored, ctx.test_labels)?,
            psnr_db,
            psnr_inf_excluded: inf,
            mae: mae_v,
            n_images: n,
            defense_source_model: None,
        });
    }
    Ok(report)
}

/// Accuracy and generalizability grids for per-attack defense models
/// evaluated across attack conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizabilityMatrix {
    /// Row labels: defense model names (`model_fgsm`, ..., `model_combined`).
    pub models: Vec<String>,
    /// The attack each row's defense was trained on (`None` for combined).
    pub trained_on: Vec<Option<String>>,
    /// Column labels: `clean` plus attack kinds.
    pub conditions: Vec<String>,
    /// Accuracy without any defense, per condition.
    pub no_defense: Vec<f64>,
    /// Defended accuracy, `acc[model][condition]`.
    pub acc: Vec<Vec<f64>>,
    /// Generalizability `g[model][condition]`; absent on the model's own
    /// attack, the clean column, and where the denominator is zero.
    pub g: Vec<Vec<Option<f64>>>,
}

impl GeneralizabilityMatrix {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w =
            csv::Writer::from_path(path).map_err(|e| AdvError::Data(format!("csv: {e}")))?;
        let mut header = vec!["model".to_string(), "metric".to_string()];
        header.extend(self.conditions.iter().cloned());
        w.write_record(&header).map_err(|e| AdvError::Data(format!("csv: {e}")))?;
        let mut nd = vec!["(none)".to_string(), "acc".to_string()];
        nd.extend(self.no_defense.iter().map(|v| format!("{v}")));
        w.write_record(&nd).map_err(|e| AdvError::Data(format!("csv: {e}")))?;
        for (i, model) in self.models.iter().enumerate() {
            let mut acc_row = vec![model.clone(), "acc".to_string()];
            acc_row.extend(self.acc[i].iter().map(|v| format!("{v}")));
            w.write_record(&acc_row).map_err(|e| AdvError::Data(format!("csv: {e}")))?;
            let mut g_row = vec![model.clone(), "g".to_string()];
            g_row.extend(
                self.g[i].iter().map(|v| v.map(|g| format!("{g:.3}")).unwrap_or_default()),
            );
            w.write_record(&g_row).map_err(|e| AdvError::Data(format!("csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Builds the matrix: each defense model (trained on one attack, plus the
/// combined model) is evaluated against every condition (clean + attacks,
/// including held-out kinds never trained on).
pub fn generalizability_matrix(
    ctx: &EvalContext<'_>,
    defenses: &[(String, Option<String>, &DefenseModel)],
    conditions: &[(String, Option<AttackConfig>)],
) -> Result<GeneralizabilityMatrix> {
    if defenses.is_empty() || conditions.is_empty() {
        return Err(AdvError::Config("matrix needs at least one model and condition".into()));
    }
    let mut no_defense = Vec::with_capacity(conditions.len());
    let mut acc = vec![Vec::with_capacity(conditions.len()); defenses.len()];
    for (_, cfg) in conditions {
        let eval_batch = match cfg {
            Some(attack) => {
                run_attack(ctx.classifier, ctx.test_images, Some(ctx.test_labels), attack)?
                    .adversarial
            }
            None => ctx.test_images.clone(),
        };
        no_defense.push(accuracy(ctx.classifier, &eval_batch, ctx.test_labels)?);
        for (row, (_, _, defense)) in defenses.iter().enumerate() {
            let restored = defense.reconstruct(&eval_batch)?;
            acc[row].push(accuracy(ctx.classifier, &restored, ctx.test_labels)?);
        }
    }

    let mut g = vec![vec![None; conditions.len()]; defenses.len()];
    for (row, (_, trained_on, _)) in defenses.iter().enumerate() {
        let Some(own_attack) = trained_on else { continue };
        let Some(own_col) = conditions.iter().position(|(name, _)| name == own_attack) else {
            continue;
        };
        let own_acc = acc[row][own_col];
        for (col, (name, cfg)) in conditions.iter().enumerate() {
            if col == own_col || cfg.is_none() {
                continue; // diagonal and clean column carry no G
            }
            let _ = name;
            g[row][col] = generalizability(acc[row][col], own_acc);
        }
    }

    Ok(GeneralizabilityMatrix {
        models: defenses.iter().map(|(n, _, _)| n.clone()).collect(),
        trained_on: defenses.iter().map(|(_, t, _)| t.clone()).collect(),
        conditions: conditions.iter().map(|(n, _)| n.clone()).collect(),
        no_defense,
        acc,
        g,
    })
}

/// Cross-model transfer: a defense trained against one model's attacks is
/// applied to other target models, with attacks regenerated against each
/// target's own gradients.
pub fn cross_model_transfer(
    defense: &DefenseModel,
    source_model_id: &str,
    targets: &[(&ConvNet, String)],
    attacks: &[AttackConfig],
    dataset: &str,
    test_images: &ImageBatch,
    test_labels: &LabelBatch,
    seed: u64,
) -> Result<EvaluationReport> {
    let defense_id = defense.fingerprint();
    let mut report = EvaluationReport::new(Provenance {
        seed,
        manifests: vec![],
        checkpoints: vec![defense_id.clone()],
        tensor_path: Some(TensorPath::BitExact),
    });
    let n = test_images.len();
    for (target, target_id) in targets {
        // clean rows: no defense, then defense applied to clean inputs
        report.rows.push(ReportRow {
            dataset: dataset.into(),
            attack: "clean".into(),
            epsilon: None,
            model_id: target_id.clone(),
            defense_id: None,
            accuracy: accuracy(*target, test_images, test_labels)?,
            psnr_db: None,
            psnr_inf_excluded: 0,
            mae: None,
            n_images: n,
            defense_source_model: None,
        });
        let restored_clean = defense.reconstruct(test_images)?;
        let (psnr_db, inf, mae_v) = metric_pair(test_images, &restored_clean)?;
        report.rows.push(ReportRow {
            dataset: dataset.into(),
            attack: "clean".into(),
            epsilon: None,
            model_id: target_id.clone(),
            defense_id: Some(defense_id.clone()),
            accuracy: accuracy(*target, &restored_clean, test_labels)?,
            psnr_db,
            psnr_inf_excluded: inf,
            mae: mae_v,
            n_images: n,
            defense_source_model: Some(source_model_id.into()),
        });
        for cfg in attacks {
            let result = run_attack(*target, test_images, Some(test_labels), cfg)?;
            report.rows.push(ReportRow {
                dataset: dataset.into(),
                attack: cfg.kind.id().into(),
                epsilon: Some(cfg.budget.epsilon),
                model_id: target_id.clone(),
                defense_id: None,
                accuracy: accuracy(*target, &result.adversarial, test_labels)?,
                psnr_db: None,
                psnr_inf_excluded: 0,
                mae: None,
                n_images: n,
                defense_source_model: None,
            });
            let restored = defense.reconstruct(&result.adversarial)?;
            let (psnr_db, inf, mae_v) = metric_pair(test_images, &restored)?;
            report.rows.push(ReportRow {
                dataset: dataset.into(),
                attack: cfg.kind.id().into(),
                epsilon: Some(cfg.budget.epsilon),
                model_id: target_id.clone(),
                defense_id: Some(defense_id.clone()),
                accuracy: accuracy(*target, &restored, test_labels)?,
                psnr_db,
                psnr_inf_excluded: inf,
                mae: mae_v,
                n_images: n,
                defense_source_model: Some(source_model_id.into()),
            });
        }
    }
    Ok(report)
}

/// One cell of the robustness sweep grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub attack: String,
    pub epsilon: f32,
    pub iterations: usize,
    pub attacked_accuracy: f64,
    pub defended_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub seed: u64,
    pub defense_id: String,
}

impl SweepReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Defended accuracies for one (attack, epsilon) line, by iterations.
    pub fn line(&self, attack: AttackKind, epsilon: f32) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.attack == attack.id() && (c.epsilon - epsilon).abs() < 1e-9)
            .map(|c| (c.iterations, c.defended_accuracy))
            .collect()
    }
}

/// Default grids: iterations 10..=100 step 10; ε ∈ {2, 5, 10}/255.
pub fn default_sweep_grids() -> (Vec<usize>, Vec<f32>) {
    ((1..=10).map(|i| i * 10).collect(), vec![2.0 / 255.0, 5.0 / 255.0, 10.0 / 255.0])
}

/// Robustness sweep: defended accuracy per (attack, ε, iteration-count)
/// cell, one figure per ε.
pub fn robustness_sweep(
    ctx: &EvalContext<'_>,
    defense: &DefenseModel,
    attacks: &[AttackKind],
    iteration_grid: &[usize],
    epsilon_grid: &[f32],
    figures_dir: Option<&Path>,
) -> Result<SweepReport> {
    if iteration_grid.is_empty() || epsilon_grid.is_empty() || attacks.is_empty() {
        return Err(AdvError::Config("sweep grids must be non-empty".into()));
    }
    for kind in attacks {
        if !matches!(kind, AttackKind::Pgd | AttackKind::MiFgsm) {
            return Err(AdvError::Config(format!(
                "robustness sweep supports pgd and mifgsm, got {kind}"
            )));
        }
    }
    let mut cells = Vec::new();
    for kind in attacks {
        for &eps in epsilon_grid {
            for &iters in iteration_grid {
                let mut cfg = AttackConfig::new(*kind).with_epsilon(eps).with_seed(
                    ctx.seed ^ ((iters as u64) << 8) ^ ((eps * 1e6) as u64),
                );
                cfg.iterations = iters;
                let result =
                    run_attack(ctx.classifier, ctx.test_images, Some(ctx.test_labels), &cfg)?;
                let restored = defense.reconstruct(&result.adversarial)?;
                cells.push(SweepCell {
                    attack: kind.id().into(),
                    epsilon: eps,
                    iterations: iters,
                    attacked_accuracy: accuracy(
                        ctx.classifier,
                        &result.adversarial,
                        ctx.test_labels,
                    )?,
                    defended_accuracy: accuracy(ctx.classifier, &restored, ctx.test_labels)?,
                });
            }
        }
    }
    let report = SweepReport { cells, seed: ctx.seed, defense_id: defense.fingerprint() };
    if let Some(dir) = figures_dir {
        for &eps in epsilon_grid {
            let series: Vec<Series> = attacks
                .iter()
                .map(|kind| Series {
                    name: kind.id().to_string(),
                    points: report
                        .line(*kind, eps)
                        .into_iter()
                        .map(|(it, acc)| (it as f64, acc))
                        .collect(),
                })
                .collect();
            let eps255 = (eps * 255.0).round() as u32;
            line_chart(
                &dir.join(format!("sweep_eps_{eps255}_255.svg")),
                &format!("Defended accuracy vs attack iterations (eps = {eps255}/255)"),
                "attack iterations",
                "accuracy (%)",
                &series,
                Some((0.0, 100.0)),
            )?;
        }
    }
    Ok(report)
}

/// One arm of the residual-block ablation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationArm {
    pub residual_blocks: usize,
    pub final_l1: f64,
    pub final_perceptual: f64,
    pub final_gen_adv: f64,
    pub final_disc: f64,
    /// `(attack id, defended accuracy)` per evaluated attack.
    pub defended_accuracy: Vec<(String, f64)>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    pub seed: u64,
}

impl AblationReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Wall times per arm, kept out of the deterministic report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTiming {
    pub residual_blocks: usize,
    pub train_seconds: f64,
}

/// Residual-block ablation: trains one defense per block count under an
/// identical budget (same pairs, seed, epochs) and evaluates each against
/// the given attacks. A diverging arm is reported, not dropped.
#[allow(clippy::too_many_arguments)]
pub fn ablation_residual_blocks(
    ctx: &EvalContext<'_>,
    pairs: &PairSet,
    pairs_fingerprint: &str,
    block_counts: &[usize],
    gcfg_base: &GeneratorConfig,
    dcfg_base: &DiscriminatorConfig,
    pcfg: &PerceptualConfig,
    extractor: &dyn FeatureExtractor,
    tcfg: &DefenseTrainConfig,
    eval_attacks: &[AttackConfig],
) -> Result<(AblationReport, Vec<AblationTiming>)> {
    if block_counts.is_empty() {
        return Err(AdvError::Config("ablation needs at least one block count".into()));
    }
    let mut arms = Vec::new();
    let mut timings = Vec::new();
    // pre-generate the attacked evaluation batches once; identical for arms
    let mut eval_batches = Vec::new();
    for cfg in eval_attacks {
        let r = run_attack(ctx.classifier, ctx.test_images, Some(ctx.test_labels), cfg)?;
        eval_batches.push((cfg.kind.id().to_string(), r.adversarial));
    }
    for &blocks in block_counts {
        let gcfg = gcfg_base.clone().with_residual_blocks(blocks);
        let dcfg = dcfg_base.clone().with_residual_blocks(blocks);
        let start = Instant::now();
        let outcome =
            train_defense(pairs, pairs_fingerprint, &gcfg, &dcfg, pcfg, extractor, tcfg, None);
        let seconds = start.elapsed().as_secs_f64();
        timings.push(AblationTiming { residual_blocks: blocks, train_seconds: seconds });
        match outcome {
            Ok((model, logs)) => {
                let last = logs.last().expect("at least one epoch");
                let mut defended = Vec::new();
                for (name, batch) in &eval_batches {
                    let restored = model.reconstruct(batch)?;
                    defended.push((
                        name.clone(),
                        accuracy(ctx.classifier, &restored, ctx.test_labels)?,
                    ));
                }
                arms.push(AblationArm {
                    residual_blocks: blocks,
                    final_l1: last.l1,
                    final_perceptual: last.perceptual,
                    final_gen_adv: last.gen_adv,
                    final_disc: last.disc,
                    defended_accuracy: defended,
                    diverged: false,
                });
            }
            Err(AdvError::Numeric(msg)) => {
                log::warn!("ablation arm with {blocks} residual blocks diverged: {msg}");
                arms.push(AblationArm {
                    residual_blocks: blocks,
                    final_l1: f64::NAN,
                    final_perceptual: f64::NAN,
                    final_gen_adv: f64::NAN,
                    final_disc: f64::NAN,
                    defended_accuracy: Vec::new(),
                    diverged: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((AblationReport { arms, seed: tcfg.seed }, timings))
}

/// Emits the ablation figures: training time vs block count and final
/// losses vs block count.
pub fn ablation_figures(
    report: &AblationReport,
    timings: &[AblationTiming],
    dir: &Path,
) -> Result<()> {
    let time_series = vec![Series {
        name: "training time (s)".into(),
        points: timings
            .iter()
            .map(|t| (t.residual_blocks as f64, t.train_seconds))
            .collect(),
    }];
    line_chart(
        &dir.join("ablation_time.svg"),
        "Training time vs residual blocks",
        "residual blocks",
        "seconds",
        &time_series,
        None,
    )?;
    let ok_arms: Vec<&AblationArm> = report.arms.iter().filter(|a| !a.diverged).collect();
    if !ok_arms.is_empty() {
        let series = vec![
            Series {
                name: "l1".into(),
                points: ok_arms
                    .iter()
                    .map(|a| (a.residual_blocks as f64, a.final_l1))
                    .collect(),
            },
            Series {
                name: "perceptual".into(),
                points: ok_arms
                    .iter()
                    .map(|a| (a.residual_blocks as f64, a.final_perceptual))
                    .collect(),
            },
            Series {
                name: "generator adv".into(),
                points: ok_arms
                    .iter()
                    .map(|a| (a.residual_blocks as f64, a.final_gen_adv))
                    .collect(),
            },
        ];
        line_chart(
            &dir.join("ablation_losses.svg"),
            "Final training losses vs residual blocks",
            "residual blocks",
            "loss",
            &series,
            None,
        )?;
    }
    Ok(())
}

/// Builds the attack configurations used by the table-style protocols at a
/// given ε: FGSM / PGD / C&W with the evaluation-tuned C&W settings.
pub fn table_attacks(epsilon: f32, seed: u64) -> Vec<AttackConfig> {
    let mut fgsm = AttackConfig::new(AttackKind::Fgsm).with_epsilon(epsilon);
    fgsm.seed = seed ^ 0xF6;
    let mut pgd = AttackConfig::new(AttackKind::Pgd).with_epsilon(epsilon);
    pgd.seed = seed ^ 0x96D;
    let mut cw = AttackConfig::new(AttackKind::Cw);
    cw.cw_constant = 5.0;
    cw.cw_learning_rate = 0.02;
    cw.cw_steps = 150;
    cw.seed = seed ^ 0xC3;
    vec![fgsm, pgd, cw]
}

/// The composite dataset recipe behind the trained defenses: every clean
/// training image attacked by each of FGSM, PGD, and C&W.
pub fn build_combined_pairs(
    classifier: &ConvNet,
    model_id: &str,
    train_images: &ImageBatch,
    train_labels: &LabelBatch,
    epsilon: f32,
    seed: u64,
    dataset: &str,
) -> Result<(PairSet, crate::datasets::DatasetManifest)> {
    build_adversarial_dataset(
        classifier,
        model_id,
        train_images,
        train_labels,
        &table_attacks(epsilon, seed),
        BuildMode::CrossProduct,
        seed,
        dataset,
        "train",
    )
}
