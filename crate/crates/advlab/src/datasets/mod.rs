//! Dataset ingestion, adversarial-pair construction, manifests, and
//! lossless tensor persistence.
//!
//! Real datasets load from their standard distribution files under the data
//! root (`ADVLAB_DATA_ROOT`, default `./data`); the built-in `synthetic`
//! dataset generates seeded digit glyphs at MNIST geometry and needs no
//! files. When a protocol asks for a file-backed dataset that is absent,
//! [`load_or_synthetic`] substitutes the synthetic set and says so.

mod builder;
mod cifar;
mod idx;
mod manifest;
mod png;
mod synthetic;
mod tensorfile;

pub use builder::{build_adversarial_dataset, load_pairs, save_pairs, PairSet};
pub use manifest::{
    fingerprint_parts, BuildMode, DatasetManifest, ManifestHeader, ManifestRecord,
};
pub use png::{export_png, import_png};
pub use synthetic::generate as generate_synthetic;
pub use tensorfile::{load_f32, load_u32, save_f32, save_u32};

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array4, Axis};

use crate::core::{ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};
use crate::nn::rng_stream;

pub const DATA_ROOT_ENV: &str = "ADVLAB_DATA_ROOT";

/// Resolves the data root: explicit argument, environment override, or
/// `./data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(DATA_ROOT_ENV) {
        return PathBuf::from(env);
    }
    PathBuf::from("data")
}

/// A loaded classification dataset with train and test splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train_images: ImageBatch,
    pub train_labels: LabelBatch,
    pub test_images: ImageBatch,
    pub test_labels: LabelBatch,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.train_labels.num_classes()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.train_images.image_shape()
    }

    /// Seeded subset of both splits (sampling without replacement).
    pub fn subset(&self, train_n: usize, test_n: usize, seed: u64) -> Dataset {
        let pick = |images: &ImageBatch, labels: &LabelBatch, n: usize, salt: u64| {
            let total = images.len();
            let take = n.min(total);
            let mut order: Vec<usize> = (0..total).collect();
            let mut rng = rng_stream(seed, salt);
            crate::classifiers::shuffle(&mut order, &mut rng);
            order.truncate(take);
            order.sort_unstable();
            (
                ImageBatch::new(images.data().select(Axis(0), &order)).unwrap(),
                LabelBatch::new(
                    Array1::from_vec(order.iter().map(|&i| labels.labels()[i]).collect()),
                    labels.num_classes(),
                )
                .unwrap(),
            )
        };
        let (train_images, train_labels) =
            pick(&self.train_images, &self.train_labels, train_n, 0xA0);
        let (test_images, test_labels) = pick(&self.test_images, &self.test_labels, test_n, 0xB0);
        Dataset { name: self.name.clone(), train_images, train_labels, test_images, test_labels }
    }
}

/// Known dataset names.
pub const DATASET_NAMES: [&str; 4] = ["mnist", "fashion-mnist", "cifar10", "synthetic"];

fn missing(name: &str, path: &Path, fetch: &str) -> AdvError {
    AdvError::MissingArtifact {
        what: format!("dataset '{name}' at {}", path.display()),
        hint: format!(
            "download the standard distribution files into that directory ({fetch}), or use \
             --dataset synthetic"
        ),
    }
}

fn find_idx(dir: &Path, stem: &str) -> Option<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&candidate);
        if p.exists() {
            return Some(p);
        }
    }
    None
}

fn load_idx_dataset(name: &str, dir: &Path, fetch: &str) -> Result<Dataset> {
    let stems = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];
    let mut paths = Vec::new();
    for stem in stems {
        paths.push(find_idx(dir, stem).ok_or_else(|| missing(name, dir, fetch))?);
    }
    let train_images = ImageBatch::new(idx::load_idx_images(&paths[0])?)?;
    let train_labels = LabelBatch::new(idx::load_idx_labels(&paths[1])?, 10)?;
    let test_images = ImageBatch::new(idx::load_idx_images(&paths[2])?)?;
    let test_labels = LabelBatch::new(idx::load_idx_labels(&paths[3])?, 10)?;
    Ok(Dataset { name: name.into(), train_images, train_labels, test_images, test_labels })
}

/// Sizes for the generated synthetic splits.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub train_n: usize,
    pub test_n: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { train_n: 4000, test_n: 1500, height: 28, width: 28, seed: 1234 }
    }
}

pub fn load_synthetic(spec: SyntheticSpec) -> Result<Dataset> {
    let (train_images, train_labels) =
        synthetic::generate(spec.train_n, spec.height, spec.width, spec.seed)?;
    let (test_images, test_labels) =
        synthetic::generate(spec.test_n, spec.height, spec.width, spec.seed ^ 0x7E57_0000)?;
    Ok(Dataset {
        name: "synthetic".into(),
        train_images: ImageBatch::new(train_images)?,
        train_labels: LabelBatch::new(train_labels, 10)?,
        test_images: ImageBatch::new(test_images)?,
        test_labels: LabelBatch::new(test_labels, 10)?,
    })
}

/// Loads a dataset by name. File-backed datasets error with fetch
/// instructions when their files are absent.
pub fn load_dataset(name: &str, root: Option<&Path>, synthetic: SyntheticSpec) -> Result<Dataset> {
    let root = data_root(root);
    match name.to_ascii_lowercase().as_str() {
        "mnist" => load_idx_dataset(
            "mnist",
            &root.join("mnist"),
            "the four idx-ubyte files of the MNIST handwritten digit set",
        ),
        "fashion-mnist" | "fashion_mnist" | "fmnist" => load_idx_dataset(
            "fashion-mnist",
            &root.join("fashion-mnist"),
            "the four idx-ubyte files of the Fashion-MNIST set",
        ),
        "cifar10" | "cifar-10" => {
            let dir = root.join("cifar-10-batches-bin");
            let train_files = cifar::train_batch_files(&dir);
            let test_file = cifar::test_batch_file(&dir);
            if !test_file.exists() || train_files.iter().any(|p| !p.exists()) {
                return Err(missing("cifar10", &dir, "the CIFAR-10 binary batch files"));
            }
            let (train_images, train_labels) = cifar::load_cifar_batches(&train_files)?;
            let (test_images, test_labels) = cifar::load_cifar_batches(&[test_file])?;
            Ok(Dataset {
                name: "cifar10".into(),
                train_images: ImageBatch::new(train_images)?,
                train_labels: LabelBatch::new(train_labels, 10)?,
                test_images: ImageBatch::new(test_images)?,
                test_labels: LabelBatch::new(test_labels, 10)?,
            })
        }
        "synthetic" => load_synthetic(synthetic),
        other => Err(AdvError::Config(format!(
            "unknown dataset '{other}' (valid: {})",
            DATASET_NAMES.join(", ")
        ))),
    }
}

/// Loads the requested dataset, falling back to the synthetic glyph set at
/// the same geometry when the files are absent. Returns the dataset and a
/// flag telling whether the fallback fired.
pub fn load_or_synthetic(
    name: &str,
    root: Option<&Path>,
    synthetic: SyntheticSpec,
) -> Result<(Dataset, bool)> {
    match load_dataset(name, root, synthetic) {
        Ok(d) => Ok((d, false)),
        Err(AdvError::MissingArtifact { what, .. }) => {
            log::warn!("{what} is unavailable; substituting the synthetic glyph dataset");
            let mut d = load_synthetic(synthetic)?;
            d.name = format!("synthetic({name}-fallback)");
            Ok((d, true))
        }
        Err(e) => Err(e),
    }
}

/// Wraps raw arrays into batch types, for loaders and tests.
pub fn batches_from_raw(
    images: Array4<f32>,
    labels: Array1<u32>,
    num_classes: usize,
) -> Result<(ImageBatch, LabelBatch)> {
    Ok((ImageBatch::new(images)?, LabelBatch::new(labels, num_classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_loads_and_subsets() {
        let ds = load_dataset(
            "synthetic",
            None,
            SyntheticSpec { train_n: 50, test_n: 20, ..Default::default() },
        )
        .unwrap();
        assert_eq!(ds.train_images.len(), 50);
        assert_eq!(ds.test_images.len(), 20);
        let sub = ds.subset(10, 5, 3);
        assert_eq!(sub.train_images.len(), 10);
        assert_eq!(sub.test_images.len(), 5);
        // subsetting is deterministic
        let sub2 = ds.subset(10, 5, 3);
        assert_eq!(sub.train_images.data(), sub2.train_images.data());
    }

    #[test]
    fn missing_mnist_errors_with_instructions() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset("mnist", Some(dir.path()), SyntheticSpec::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mnist"), "{msg}");
        assert!(msg.contains("download"), "{msg}");
    }

    #[test]
    fn fallback_substitutes_synthetic() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, fell_back) = load_or_synthetic(
            "mnist",
            Some(dir.path()),
            SyntheticSpec { train_n: 30, test_n: 10, ..Default::default() },
        )
        .unwrap();
        assert!(fell_back);
        assert!(ds.name.contains("fallback"));
        assert_eq!(ds.image_shape(), (1, 28, 28));
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(load_dataset("imagenet-home-edition", None, SyntheticSpec::default()).is_err());
    }
}
