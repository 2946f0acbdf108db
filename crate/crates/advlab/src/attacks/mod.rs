//! White-box attack procedures against any [`Classifier`].
//!
//! All L∞ attacks guarantee `‖adv − clean‖∞ ≤ ε` and box membership for
//! every output image. Attacks are pure functions of (classifier weights,
//! inputs, config, seed); per-image randomness is derived from
//! `(seed, image index)` so batch partitioning does not change results.

mod composite;
mod cw;
mod deepfool;
mod gradient;
mod square;

pub use composite::{auto_composite, composite_with_members, CompositeMember};
pub use cw::cw_l2;
pub use deepfool::deepfool;
pub use gradient::{bim, fgsm, mi_fgsm, pgd};
pub use square::{square_attack, square_attack_with_trace};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::core::{predictions, Classifier, ImageBatch, LabelBatch, Norm, PerturbationBudget};
use crate::error::{AdvError, Result};

/// Attack procedure selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    MiFgsm,
    Cw,
    DeepFool,
    Square,
    AutoComposite,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Pgd,
        AttackKind::MiFgsm,
        AttackKind::Cw,
        AttackKind::DeepFool,
        AttackKind::Square,
        AttackKind::AutoComposite,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::MiFgsm => "mifgsm",
            AttackKind::Cw => "cw",
            AttackKind::DeepFool => "deepfool",
            AttackKind::Square => "square",
            AttackKind::AutoComposite => "autocomposite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let canon = s.to_ascii_lowercase().replace(['-', '_'], "");
        match canon.as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            "pgd" => Ok(AttackKind::Pgd),
            "mifgsm" => Ok(AttackKind::MiFgsm),
            "cw" | "cwl2" => Ok(AttackKind::Cw),
            "deepfool" => Ok(AttackKind::DeepFool),
            "square" => Ok(AttackKind::Square),
            "autocomposite" | "auto" | "aa" => Ok(AttackKind::AutoComposite),
            _ => Err(AdvError::Config(format!(
                "unknown attack '{s}' (valid: fgsm, bim, pgd, mifgsm, cw, deepfool, square, autocomposite)"
            ))),
        }
    }

    /// Does the attack consume true labels? DeepFool steers off the model's
    /// own prediction instead.
    pub fn needs_labels(&self) -> bool {
        !matches!(self, AttackKind::DeepFool)
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Full attack specification. Fields irrelevant to a kind are ignored by it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub budget: PerturbationBudget,
    /// Step size α in pixel units (iterative L∞ attacks).
    pub step_size: f32,
    /// Iteration count N, or the query budget for the square attack.
    pub iterations: usize,
    /// Momentum decay μ (MI-FGSM).
    pub momentum_decay: f32,
    /// Trade-off constant c (C&W).
    pub cw_constant: f32,
    pub cw_learning_rate: f32,
    pub cw_steps: usize,
    /// Margin confidence κ (C&W).
    pub cw_confidence: f32,
    pub deepfool_overshoot: f32,
    pub deepfool_max_iter: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Defaults mirror the dataset-construction settings: ε = 16/255 (L∞),
    /// α = 0.01, 40 iterations. C&W runs under the L2 norm.
    pub fn new(kind: AttackKind) -> Self {
        let budget = match kind {
            AttackKind::Cw => PerturbationBudget::l2(f32::INFINITY),
            _ => PerturbationBudget::linf(16.0 / 255.0),
        };
        Self {
            kind,
            budget,
            step_size: 0.01,
            iterations: match kind {
                AttackKind::Fgsm => 1,
                AttackKind::Square => 600,
                _ => 40,
            },
            momentum_decay: 1.0,
            cw_constant: 1.0,
            cw_learning_rate: 0.01,
            cw_steps: 100,
            cw_confidence: 0.0,
            deepfool_overshoot: 0.02,
            deepfool_max_iter: 50,
            random_start: matches!(kind, AttackKind::Pgd | AttackKind::AutoComposite),
            seed: 0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f32) -> Self {
        self.budget.epsilon = epsilon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        match self.kind {
            AttackKind::Bim | AttackKind::Pgd | AttackKind::MiFgsm => {
                if self.iterations < 1 {
                    return Err(AdvError::Config("iterative attacks need iterations >= 1".into()));
                }
                if !(self.step_size > 0.0) {
                    return Err(AdvError::Config("iterative attacks need step_size > 0".into()));
                }
                if self.kind == AttackKind::Bim && self.random_start {
                    return Err(AdvError::Config("bim does not take a random start".into()));
                }
                if self.kind == AttackKind::MiFgsm && self.momentum_decay < 0.0 {
                    return Err(AdvError::Config("momentum_decay must be >= 0".into()));
                }
            }
            AttackKind::Cw => {
                if self.cw_steps < 1 {
                    return Err(AdvError::Config("cw needs cw_steps >= 1".into()));
                }
                if self.cw_constant < 0.0 {
                    return Err(AdvError::Config("cw_constant must be >= 0".into()));
                }
            }
            AttackKind::DeepFool => {
                if self.deepfool_overshoot < 0.0 {
                    return Err(AdvError::Config("deepfool_overshoot must be >= 0".into()));
                }
            }
            AttackKind::Square | AttackKind::AutoComposite => {
                if self.budget.norm != Norm::Linf {
                    return Err(AdvError::Config(format!(
                        "{} requires an Linf budget",
                        self.kind
                    )));
                }
            }
            AttackKind::Fgsm => {}
        }
        Ok(())
    }
}

/// Output of one attack run over a batch.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: ImageBatch,
    /// Per image: did the classifier's prediction flip away from the
    /// reference label (true label, or the original prediction for
    /// label-free attacks)?
    pub success: Vec<bool>,
    /// Iterations or queries spent per image.
    pub iterations_used: Vec<u32>,
}

impl AttackResult {
    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

/// Dispatches on `cfg.kind`. Labeled attacks require `y`.
pub fn run_attack(
    classifier: &dyn Classifier,
    x: &ImageBatch,
    y: Option<&LabelBatch>,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let need_y = || {
        y.ok_or_else(|| AdvError::Config(format!("attack {} requires true labels", cfg.kind)))
    };
    match cfg.kind {
        AttackKind::Fgsm => fgsm(classifier, x, need_y()?, cfg),
        AttackKind::Bim => bim(classifier, x, need_y()?, cfg),
        AttackKind::Pgd => pgd(classifier, x, need_y()?, cfg),
        AttackKind::MiFgsm => mi_fgsm(classifier, x, need_y()?, cfg),
        AttackKind::Cw => cw_l2(classifier, x, need_y()?, cfg),
        AttackKind::DeepFool => deepfool(classifier, x, cfg),
        AttackKind::Square => square_attack(classifier, x, need_y()?, cfg),
        AttackKind::AutoComposite => auto_composite(classifier, x, need_y()?, cfg),
    }
}

/// Per-image misclassification mask against reference labels.
pub(crate) fn misclassified_mask(logits: &Array2<f32>, reference: &[u32]) -> Vec<bool> {
    let preds = predictions(logits);
    preds.iter().zip(reference).map(|(p, r)| p != r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing_round_trips() {
        for kind in AttackKind::ALL {
            assert_eq!(AttackKind::parse(kind.id()).unwrap(), kind);
        }
        assert_eq!(AttackKind::parse("MI-FGSM").unwrap(), AttackKind::MiFgsm);
        assert!(AttackKind::parse("nope").is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = AttackConfig::new(AttackKind::Pgd);
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = AttackConfig::new(AttackKind::Fgsm);
        cfg.budget.epsilon = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = AttackConfig::new(AttackKind::Bim);
        cfg.random_start = true;
        assert!(cfg.validate().is_err());

        let mut cfg = AttackConfig::new(AttackKind::Square);
        cfg.budget = PerturbationBudget::l2(1.0);
        assert!(cfg.validate().is_err());
    }
}
