//! Adversarial-pair dataset construction: attack a clean split with one or
//! more attacks and persist (adversarial, clean, label) pairs with a
//! provenance manifest.

use std::path::Path;

use ndarray::{Array1, Array4, Axis};

use super::manifest::{fingerprint_parts, BuildMode, DatasetManifest, ManifestHeader, ManifestRecord};
use super::tensorfile;
use crate::attacks::{run_attack, AttackConfig};
use crate::core::{Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};

/// Attack chunks are sized and seeded deterministically; changing worker
/// counts never changes outputs.
const ATTACK_CHUNK: usize = 256;

/// An in-memory adversarial-pair dataset: row `i` of every field belongs to
/// the same pair.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub adversarial: ImageBatch,
    pub clean: ImageBatch,
    pub labels: LabelBatch,
    pub attack_tags: Vec<String>,
    pub model_tag: String,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies a subset of pairs by row index.
    pub fn select(&self, rows: &[usize]) -> PairSet {
        PairSet {
            adversarial: ImageBatch::new(self.adversarial.data().select(Axis(0), rows)).unwrap(),
            clean: ImageBatch::new(self.clean.data().select(Axis(0), rows)).unwrap(),
            labels: LabelBatch::new(
                Array1::from_vec(rows.iter().map(|&r| self.labels.labels()[r]).collect()),
                self.labels.num_classes(),
            )
            .unwrap(),
            attack_tags: rows.iter().map(|&r| self.attack_tags[r].clone()).collect(),
            model_tag: self.model_tag.clone(),
        }
    }
}

/// Builds the adversarial-pair dataset.
///
/// `CrossProduct` pairs every clean image with every attack (the combined
/// recipe: `|clean| × |attacks|` records); `Partition` splits the clean
/// images into `|attacks|` contiguous chunks, one attack each. Unsuccessful
/// adversarials are kept — they are still perturbed inputs. Records are
/// ordered by `(image id, attack kind)`.
pub fn build_adversarial_dataset(
    classifier: &dyn Classifier,
    model_id: &str,
    images: &ImageBatch,
    labels: &LabelBatch,
    attacks: &[AttackConfig],
    mode: BuildMode,
    seed: u64,
    dataset_name: &str,
    split: &str,
) -> Result<(PairSet, DatasetManifest)> {
    if attacks.is_empty() {
        return Err(AdvError::Config("attack list must not be empty".into()));
    }
    if images.len() != labels.len() {
        return Err(AdvError::Shape("image/label count mismatch".into()));
    }
    let n = images.len();
    let (c, h, w) = images.image_shape();

    // (image_id, attack_idx) work items
    let assignments: Vec<(usize, usize)> = match mode {
        BuildMode::CrossProduct => {
            (0..n).flat_map(|i| (0..attacks.len()).map(move |a| (i, a))).collect()
        }
        BuildMode::Partition => {
            let chunk = n.div_ceil(attacks.len());
            (0..n).map(|i| (i, (i / chunk).min(attacks.len() - 1))).collect()
        }
    };

    let rows = assignments.len();
    let mut adv = Array4::zeros((rows, c, h, w));
    let mut clean = Array4::zeros((rows, c, h, w));
    let mut out_labels = Array1::zeros(rows);
    let mut records: Vec<Option<ManifestRecord>> = vec![None; rows];

    for (attack_idx, base_cfg) in attacks.iter().enumerate() {
        // rows of the output belonging to this attack, in image order
        let rows_for_attack: Vec<usize> = assignments
            .iter()
            .enumerate()
            .filter(|(_, &(_, a))| a == attack_idx)
            .map(|(row, _)| row)
            .collect();
        for (chunk_no, row_chunk) in rows_for_attack.chunks(ATTACK_CHUNK).enumerate() {
            let image_ids: Vec<usize> = row_chunk.iter().map(|&r| assignments[r].0).collect();
            let xb = ImageBatch::new(images.data().select(Axis(0), &image_ids)).unwrap();
            let yb = LabelBatch::new(
                Array1::from_vec(image_ids.iter().map(|&i| labels.labels()[i]).collect()),
                labels.num_classes(),
            )?;
            let mut cfg = base_cfg.clone();
            cfg.seed = seed
                ^ (attack_idx as u64).wrapping_mul(0x9e37_79b9)
                ^ (chunk_no as u64).wrapping_mul(0x85eb_ca6b_0000);
            let result = run_attack(classifier, &xb, Some(&yb), &cfg)?;
            for (local, (&row, &img_id)) in row_chunk.iter().zip(&image_ids).enumerate() {
                adv.index_axis_mut(Axis(0), row)
                    .assign(&result.adversarial.data().index_axis(Axis(0), local));
                clean
                    .index_axis_mut(Axis(0), row)
                    .assign(&images.data().index_axis(Axis(0), img_id));
                out_labels[row] = labels.labels()[img_id];
                records[row] = Some(ManifestRecord {
                    row: row as u64,
                    image_id: img_id as u64,
                    label: labels.labels()[img_id],
                    attack: cfg.kind.id().into(),
                    model_id: model_id.into(),
                    epsilon: cfg.budget.epsilon,
                    success: Some(result.success[local]),
                    iterations: Some(result.iterations_used[local]),
                });
            }
        }
    }

    let records: Vec<ManifestRecord> = records.into_iter().map(|r| r.expect("row filled")).collect();
    let fingerprint = fingerprint_parts(
        &records,
        &[adv.as_slice().unwrap(), clean.as_slice().unwrap()],
    );
    let manifest = DatasetManifest {
        header: ManifestHeader {
            name: dataset_name.into(),
            split: split.into(),
            mode,
            seed,
            record_count: records.len() as u64,
            fingerprint,
        },
        records,
    };
    let pairs = PairSet {
        adversarial: ImageBatch::new(adv)?,
        clean: ImageBatch::new(clean)?,
        labels: LabelBatch::new(out_labels, labels.num_classes())?,
        attack_tags: manifest.records.iter().map(|r| r.attack.clone()).collect(),
        model_tag: model_id.into(),
    };
    Ok((pairs, manifest))
}

/// Persists a pair set plus manifest under `dir` using the bit-exact tensor
/// container.
pub fn save_pairs(dir: &Path, pairs: &PairSet, manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    tensorfile::save_f32(&dir.join("adversarial.tensor"), pairs.adversarial.data().view().into_dyn())?;
    tensorfile::save_f32(&dir.join("clean.tensor"), pairs.clean.data().view().into_dyn())?;
    tensorfile::save_u32(&dir.join("labels.tensor"), pairs.labels.labels())?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(())
}

/// Loads a pair set saved by [`save_pairs`].
pub fn load_pairs(dir: &Path) -> Result<(PairSet, DatasetManifest)> {
    let manifest = DatasetManifest::load(&dir.join("manifest.jsonl"))?;
    let adv = tensorfile::load_f32(&dir.join("adversarial.tensor"))?;
    let clean = tensorfile::load_f32(&dir.join("clean.tensor"))?;
    let labels = tensorfile::load_u32(&dir.join("labels.tensor"))?;
    let adv4 = adv.into_dimensionality::<ndarray::Ix4>().map_err(|e| AdvError::Shape(e.to_string()))?;
    let clean4 =
        clean.into_dimensionality::<ndarray::Ix4>().map_err(|e| AdvError::Shape(e.to_string()))?;
    let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let model_tag =
        manifest.records.first().map(|r| r.model_id.clone()).unwrap_or_default();
    let pairs = PairSet {
        adversarial: ImageBatch::new(adv4)?,
        clean: ImageBatch::new(clean4)?,
        labels: LabelBatch::new(labels, num_classes.max(10))?,
        attack_tags: manifest.records.iter().map(|r| r.attack.clone()).collect(),
        model_tag,
    };
    Ok((pairs, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;
    use crate::core::LinearSoftmax;
    use ndarray::Array2;
    use rand::Rng;

    fn toy_setup(n: usize) -> (LinearSoftmax, ImageBatch, LabelBatch) {
        let mut rng = crate::nn::rng_stream(1, 1);
        let w = Array2::from_shape_fn((3, 16), |_| rng.random_range(-1.0..1.0));
        let model = LinearSoftmax::new(w, Array1::zeros(3), (1, 4, 4)).unwrap();
        let x = ImageBatch::new(Array4::from_shape_fn((n, 1, 4, 4), |_| {
            rng.random_range(0.1..0.9f32)
        }))
        .unwrap();
        let y = LabelBatch::new(
            Array1::from_vec((0..n).map(|i| (i % 3) as u32).collect()),
            3,
        )
        .unwrap();
        (model, x, y)
    }

    fn fast_attacks() -> Vec<AttackConfig> {
        let mut fgsm = AttackConfig::new(AttackKind::Fgsm).with_epsilon(0.2);
        fgsm.seed = 0;
        let mut pgd = AttackConfig::new(AttackKind::Pgd).with_epsilon(0.2);
        pgd.iterations = 3;
        let mut bim = AttackConfig::new(AttackKind::Bim).with_epsilon(0.2);
        bim.iterations = 3;
        bim.random_start = false;
        vec![fgsm, pgd, bim]
    }

    #[test]
    fn cross_product_counts_multiply() {
        let (model, x, y) = toy_setup(10);
        let (pairs, manifest) = build_adversarial_dataset(
            &model,
            "lin",
            &x,
            &y,
            &fast_attacks(),
            BuildMode::CrossProduct,
            7,
            "toy",
            "train",
        )
        .unwrap();
        assert_eq!(pairs.len(), 30);
        assert_eq!(manifest.records.len(), 30);
        // ordered by (image id, attack kind id): rows grouped per image
        for img in 0..10u64 {
            let tags: Vec<&str> = manifest
                .records
                .iter()
                .filter(|r| r.image_id == img)
                .map(|r| r.attack.as_str())
                .collect();
            assert_eq!(tags.len(), 3);
        }
    }

    #[test]
    fn partition_assigns_each_image_once() {
        let (model, x, y) = toy_setup(9);
        let (pairs, manifest) = build_adversarial_dataset(
            &model,
            "lin",
            &x,
            &y,
            &fast_attacks(),
            BuildMode::Partition,
            7,
            "toy",
            "train",
        )
        .unwrap();
        assert_eq!(pairs.len(), 9);
        let mut seen = std::collections::HashSet::new();
        for r in &manifest.records {
            assert!(seen.insert(r.image_id));
        }
        // contiguous thirds
        assert_eq!(manifest.records[0].attack, "fgsm");
        assert_eq!(manifest.records[4].attack, "pgd");
        assert_eq!(manifest.records[8].attack, "bim");
    }

    #[test]
    fn empty_attack_list_is_an_error() {
        let (model, x, y) = toy_setup(4);
        assert!(build_adversarial_dataset(
            &model,
            "lin",
            &x,
            &y,
            &[],
            BuildMode::CrossProduct,
            0,
            "toy",
            "train"
        )
        .is_err());
    }

    #[test]
    fn same_seed_same_fingerprint() {
        let (model, x, y) = toy_setup(6);
        let run = |seed| {
            build_adversarial_dataset(
                &model,
                "lin",
                &x,
                &y,
                &fast_attacks(),
                BuildMode::CrossProduct,
                seed,
                "toy",
                "train",
            )
            .unwrap()
            .1
            .header
            .fingerprint
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn save_load_round_trip_preserves_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let (model, x, y) = toy_setup(5);
        let (pairs, manifest) = build_adversarial_dataset(
            &model,
            "lin",
            &x,
            &y,
            &fast_attacks()[..1],
            BuildMode::CrossProduct,
            2,
            "toy",
            "train",
        )
        .unwrap();
        save_pairs(dir.path(), &pairs, &manifest).unwrap();
        let (loaded, manifest2) = load_pairs(dir.path()).unwrap();
        assert_eq!(loaded.adversarial.data(), pairs.adversarial.data());
        assert_eq!(loaded.clean.data(), pairs.clean.data());
        assert_eq!(manifest2.header.fingerprint, manifest.header.fingerprint);
    }
}
