//! Alternating GAN training for the purification model.
//!
//! Per batch: one discriminator step (BCE on real vs generated pairs,
//! conditioned on the attacked image), then one generator step on the
//! weighted objective `adv + λ1·L1 + λ2·perceptual` against the clean
//! target. Per-epoch mean losses stream to a line-delimited run log.

use std::io::Write;
use std::path::Path;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::checkpoint::{DefenseCheckpointMeta, DefenseModel, TrainingManifest, DEFENSE_FORMAT_VERSION};
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::losses::{
    discriminator_grads, generator_adversarial_grad, l1_pixel_grad,
};
use super::perceptual::{perceptual_loss_grad, FeatureExtractor, PerceptualConfig};
use crate::datasets::PairSet;
use crate::error::{AdvError, Result};
use crate::nn::{rng_stream, Adam, ParamCollect};

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub lambda1: f32,
    pub lambda2: f32,
    pub seed: u64,
}

impl Default for DefenseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda1: 100.0,
            lambda2: 1.0,
            seed: 0,
        }
    }
}

/// Per-epoch mean losses, one line of the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l1: f64,
    pub perceptual: f64,
    pub gen_adv: f64,
    pub disc: f64,
}

/// Trains generator and discriminator from scratch on (adversarial, clean)
/// pairs. Deterministic given `tcfg.seed`. Aborts with an error if any loss
/// becomes non-finite.
pub fn train_defense(
    pairs: &PairSet,
    dataset_fingerprint: &str,
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    pcfg: &PerceptualConfig,
    extractor: &dyn FeatureExtractor,
    tcfg: &DefenseTrainConfig,
    run_log: Option<&Path>,
) -> Result<(DefenseModel, Vec<EpochLog>)> {
    if pairs.is_empty() {
        return Err(AdvError::Config("training dataset is empty".into()));
    }
    if tcfg.epochs == 0 {
        return Err(AdvError::Config("epochs must be >= 1".into()));
    }
    if pairs.adversarial.image_shape() != gcfg.input_shape {
        return Err(AdvError::Shape(format!(
            "pair shape {:?} does not match generator input {:?}",
            pairs.adversarial.image_shape(),
            gcfg.input_shape
        )));
    }
    if tcfg.lambda1 < 0.0 || tcfg.lambda2 < 0.0 {
        return Err(AdvError::Config("loss weights must be >= 0".into()));
    }

    let mut generator = Generator::new(gcfg.clone(), tcfg.seed)?;
    let mut discriminator = Discriminator::new(dcfg.clone(), tcfg.seed ^ 0xD)?;
    let mut opt_g = Adam::new(tcfg.learning_rate, tcfg.beta1, tcfg.beta2);
    let mut opt_d = Adam::new(tcfg.learning_rate, tcfg.beta1, tcfg.beta2);

    let mut log_file = match run_log {
        Some(path) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(path)?))
        }
        None => None,
    };

    let n = pairs.len();
    let mut logs = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng_stream(tcfg.seed, 0xE0_0000 | epoch as u64);
        crate::classifiers::shuffle(&mut order, &mut shuffle_rng);
        let mut dropout_rng = rng_stream(tcfg.seed, 0xD0_0000 | epoch as u64);

        let mut sums = EpochLog { epoch, l1: 0.0, perceptual: 0.0, gen_adv: 0.0, disc: 0.0 };
        let mut batches = 0usize;
        for batch_idx in order.chunks(tcfg.batch_size) {
            let att = pairs.adversarial.data().select(Axis(0), batch_idx);
            let clean = pairs.clean.data().select(Axis(0), batch_idx);

            // generator forward (training mode)
            let (fake, gcache) = generator.forward_train(&att, &mut dropout_rng);
            generator.update_running(&gcache);

            // discriminator step on (real, fake-detached)
            let (d_real, dc_real) = discriminator.forward_train(&att, &clean);
            let (d_fake, dc_fake) = discriminator.forward_train(&att, &fake);
            discriminator.update_running(&dc_real);
            discriminator.update_running(&dc_fake);
            let (loss_d, g_real, g_fake) = discriminator_grads(&d_real, &d_fake)?;
            let mut d_grads = discriminator.zeros_like();
            discriminator.backward(&dc_real, &g_real, Some(&mut d_grads));
            discriminator.backward(&dc_fake, &g_fake, Some(&mut d_grads));
            let mut d_params = discriminator.learnables_mut();
            opt_d.step(&mut d_params, &d_grads.learnables());

            // generator step against the updated discriminator
            let (d_fake2, dc2) = discriminator.forward_train(&att, &fake);
            discriminator.update_running(&dc2);
            let (loss_adv, g_scores) = generator_adversarial_grad(&d_fake2)?;
            let g_from_d = discriminator.backward(&dc2, &g_scores, None);
            let (loss_l1, g_l1) = l1_pixel_grad(&clean, &fake)?;
            let (loss_p, g_p) = perceptual_loss_grad(pcfg, extractor, &clean, &fake)?;
            let mut g_fake_total = g_from_d;
            ndarray::Zip::from(&mut g_fake_total).and(&g_l1).and(&g_p).for_each(
                |acc, &l1v, &pv| {
                    *acc += tcfg.lambda1 * l1v + tcfg.lambda2 * pv;
                },
            );
            let mut g_grads = generator.zeros_like();
            generator.backward(&gcache, &g_fake_total, &mut g_grads);
            let mut g_params = generator.learnables_mut();
            opt_g.step(&mut g_params, &g_grads.learnables());

            if !(loss_d.is_finite() && loss_adv.is_finite() && loss_l1.is_finite() && loss_p.is_finite()) {
                return Err(AdvError::Numeric(format!(
                    "defense training diverged at epoch {epoch}: disc {loss_d}, adv {loss_adv}, \
                     l1 {loss_l1}, perceptual {loss_p}"
                )));
            }
            sums.disc += loss_d;
            sums.gen_adv += loss_adv;
            sums.l1 += loss_l1;
            sums.perceptual += loss_p;
            batches += 1;
        }
        let log = EpochLog {
            epoch,
            l1: sums.l1 / batches as f64,
            perceptual: sums.perceptual / batches as f64,
            gen_adv: sums.gen_adv / batches as f64,
            disc: sums.disc / batches as f64,
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &log)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        log::info!(
            "defense epoch {epoch}: l1 {:.4} perceptual {:.4} gen_adv {:.4} disc {:.4}",
            log.l1,
            log.perceptual,
            log.gen_adv,
            log.disc
        );
        logs.push(log);
    }

    let attack_kinds = {
        let mut kinds: Vec<String> = pairs.attack_tags.clone();
        kinds.sort();
        kinds.dedup();
        kinds
    };
    let model = DefenseModel {
        generator,
        discriminator,
        meta: DefenseCheckpointMeta {
            format_version: DEFENSE_FORMAT_VERSION,
            generator: gcfg.clone(),
            discriminator: dcfg.clone(),
            perceptual: pcfg.clone(),
            lambda1: tcfg.lambda1,
            lambda2: tcfg.lambda2,
            manifest: TrainingManifest {
                dataset_fingerprint: dataset_fingerprint.into(),
                attack_kinds,
                epochs: tcfg.epochs,
                seed: tcfg.seed,
            },
        },
    };
    Ok((model, logs))
}
