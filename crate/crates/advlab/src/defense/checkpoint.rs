//! Defense checkpoints: generator + discriminator weights with their full
//! configuration and training provenance, bit-exact on round-trip.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::perceptual::PerceptualConfig;
use crate::container::{self, load_state_into};
use crate::core::ImageBatch;
use crate::error::{AdvError, Result};
use crate::nn::ParamCollect;

pub const DEFENSE_FORMAT_VERSION: u32 = 1;

/// Inference batches are processed in chunks of this many images.
const RECONSTRUCT_CHUNK: usize = 256;

/// What the defense was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub dataset_fingerprint: String,
    pub attack_kinds: Vec<String>,
    pub epochs: usize,
    pub seed: u64,
}

/// Checkpoint header; together with the weight payloads this is the full
/// serialized state of a trained defense.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseCheckpointMeta {
    pub format_version: u32,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub perceptual: PerceptualConfig,
    pub lambda1: f32,
    pub lambda2: f32,
    pub manifest: TrainingManifest,
}

/// A trained purification model.
pub struct DefenseModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub meta: DefenseCheckpointMeta,
}

impl DefenseModel {
    /// Pure inference through the generator: dropout off, running batch
    /// statistics. Output shape equals input shape.
    pub fn reconstruct(&self, x: &ImageBatch) -> Result<ImageBatch> {
        if x.image_shape() != self.meta.generator.input_shape {
            return Err(AdvError::Shape(format!(
                "input {:?} does not match checkpoint input shape {:?}",
                x.image_shape(),
                self.meta.generator.input_shape
            )));
        }
        let n = x.len();
        let mut out = ndarray::Array4::zeros(x.data().dim());
        let mut start = 0;
        while start < n {
            let end = (start + RECONSTRUCT_CHUNK).min(n);
            let chunk = x.data().slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let y = self.generator.forward_eval(&chunk);
            out.slice_mut(ndarray::s![start..end, .., .., ..]).assign(&y);
            start = end;
        }
        ImageBatch::new(out)
    }

    /// Weight hash identifying this checkpoint in report provenance.
    pub fn fingerprint(&self) -> String {
        let mut tensors = Vec::new();
        for (name, data) in self.generator.state_tensors() {
            tensors.push((format!("gen.{name}"), data));
        }
        for (name, data) in self.discriminator.state_tensors() {
            tensors.push((format!("disc.{name}"), data));
        }
        container::fingerprint(&tensors)
    }
}

pub fn save_defense(path: &Path, model: &DefenseModel) -> Result<()> {
    let mut tensors = Vec::new();
    for (name, data) in model.generator.state_tensors() {
        tensors.push((format!("gen.{name}"), data));
    }
    for (name, data) in model.discriminator.state_tensors() {
        tensors.push((format!("disc.{name}"), data));
    }
    container::write_container(path, &model.meta, &tensors)
}

pub fn load_defense(path: &Path) -> Result<DefenseModel> {
    if !path.exists() {
        return Err(AdvError::MissingArtifact {
            what: format!("defense checkpoint {}", path.display()),
            hint: "produce one with `advlab train-defense`".into(),
        });
    }
    let (meta, tensors) = container::read_container::<DefenseCheckpointMeta>(path)?;
    if meta.format_version != DEFENSE_FORMAT_VERSION {
        return Err(AdvError::Format {
            path: path.display().to_string(),
            reason: format!("unsupported defense format version {}", meta.format_version),
        });
    }
    let mut generator = Generator::new(meta.generator.clone(), meta.manifest.seed)?;
    let mut discriminator = Discriminator::new(meta.discriminator.clone(), meta.manifest.seed ^ 0xD)?;
    let mut state = Vec::new();
    for (name, slot) in generator.state_tensors_mut() {
        state.push((format!("gen.{name}"), slot));
    }
    for (name, slot) in discriminator.state_tensors_mut() {
        state.push((format!("disc.{name}"), slot));
    }
    load_state_into(path, tensors, state)?;
    Ok(DefenseModel { generator, discriminator, meta })
}
