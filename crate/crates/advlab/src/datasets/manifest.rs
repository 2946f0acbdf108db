//! Dataset manifests: line-delimited provenance records plus a content
//! fingerprint over records and tensors.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AdvError, Result};

/// How clean images were assigned to attacks during dataset construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Every image is attacked by every attack (combined-dataset recipe).
    CrossProduct,
    /// Disjoint image chunks each get one attack.
    Partition,
}

/// One record per stored pair; `row` indexes the companion tensor files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestRecord {
    pub row: u64,
    /// Index of the source image in the clean dataset split.
    pub image_id: u64,
    pub label: u32,
    /// Attack kind id, or "clean" for unattacked records.
    pub attack: String,
    pub model_id: String,
    pub epsilon: f32,
    pub success: Option<bool>,
    pub iterations: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub name: String,
    pub split: String,
    pub mode: BuildMode,
    pub seed: u64,
    pub record_count: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

/// Content hash over records (serialized form) and the raw tensor bytes.
pub fn fingerprint_parts(records: &[ManifestRecord], tensors: &[&[f32]]) -> String {
    let mut hasher = Sha256::new();
    for r in records {
        hasher.update(serde_json::to_vec(r).expect("record serializes"));
        hasher.update([b'\n']);
    }
    for t in tensors {
        for &v in *t {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|_| AdvError::MissingArtifact {
            what: format!("manifest {}", path.display()),
            hint: "produce one with `advlab attack`".into(),
        })?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| AdvError::Format {
                path: path.display().to_string(),
                reason: "empty manifest".into(),
            })??;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::with_capacity(header.record_count as usize);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        if records.len() as u64 != header.record_count {
            return Err(AdvError::Format {
                path: path.display().to_string(),
                reason: format!(
                    "header promises {} records, found {}",
                    header.record_count,
                    records.len()
                ),
            });
        }
        Ok(Self { header, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(row: u64, attack: &str) -> ManifestRecord {
        ManifestRecord {
            row,
            image_id: row / 2,
            label: (row % 10) as u32,
            attack: attack.into(),
            model_id: "convnet-a".into(),
            epsilon: 0.3,
            success: Some(row % 2 == 0),
            iterations: Some(40),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records = vec![record(0, "fgsm"), record(1, "pgd")];
        let manifest = DatasetManifest {
            header: ManifestHeader {
                name: "toy".into(),
                split: "train".into(),
                mode: BuildMode::CrossProduct,
                seed: 5,
                record_count: 2,
                fingerprint: fingerprint_parts(&records, &[]),
            },
            records,
        };
        manifest.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.records, manifest.records);
        assert_eq!(back.header.fingerprint, manifest.header.fingerprint);
    }

    #[test]
    fn fingerprint_changes_with_any_record_or_tensor_change() {
        let records = vec![record(0, "fgsm"), record(1, "pgd")];
        let base = fingerprint_parts(&records, &[&[0.5f32, 0.25]]);
        let mut altered = records.clone();
        altered[1].attack = "bim".into();
        assert_ne!(base, fingerprint_parts(&altered, &[&[0.5f32, 0.25]]));
        assert_ne!(base, fingerprint_parts(&records, &[&[0.5f32, 0.2500001]]));
        assert_eq!(base, fingerprint_parts(&records, &[&[0.5f32, 0.25]]));
    }

    #[test]
    fn record_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records = vec![record(0, "fgsm")];
        let manifest = DatasetManifest {
            header: ManifestHeader {
                name: "toy".into(),
                split: "train".into(),
                mode: BuildMode::Partition,
                seed: 0,
                record_count: 5,
                fingerprint: "x".into(),
            },
            records,
        };
        manifest.save(&path).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }
}
