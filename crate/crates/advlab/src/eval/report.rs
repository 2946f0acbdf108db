//! Evaluation reports: typed rows plus provenance, serialized as both
//! line-delimited JSON and CSV. Serialization is deterministic — identical
//! inputs produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AdvError, Result};

/// Which persistence path produced the tensors being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorPath {
    /// The lossless binary container (the only path acceptance runs use).
    BitExact,
    /// Values passed through 8-bit PNG quantization.
    PngQuantized,
}

/// One table row: a (dataset, condition, model, defense) cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    /// Attack kind id, or "clean".
    pub attack: String,
    pub epsilon: Option<f32>,
    pub model_id: String,
    /// `None` = no defense applied.
    pub defense_id: Option<String>,
    /// Percent.
    pub accuracy: f64,
    /// Mean PSNR vs the clean images, dB; `None` for the clean condition or
    /// when every pair was identical.
    pub psnr_db: Option<f64>,
    /// Images excluded from the PSNR mean because their MSE was zero.
    pub psnr_inf_excluded: usize,
    /// Mean absolute error vs the clean images; `None` for the clean rows.
    pub mae: Option<f64>,
    pub n_images: usize,
    /// For transfer rows: the model whose attacks the defense was trained
    /// on, when it differs from `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense_source_model: Option<String>,
}

/// Where the numbers came from.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub seed: u64,
    pub manifests: Vec<String>,
    pub checkpoints: Vec<String>,
    pub tensor_path: Option<TensorPath>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

impl EvaluationReport {
    pub fn new(provenance: Provenance) -> Self {
        Self { rows: Vec::new(), provenance }
    }

    pub fn row(&self, attack: &str, defense: Option<&str>) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.attack == attack && r.defense_id.as_deref() == defense
        })
    }

    /// Header line with provenance, then one JSON line per row.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.provenance)?;
        w.write_all(b"\n")?;
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        use std::io::BufRead;
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let provenance: Provenance = serde_json::from_str(&lines.next().ok_or_else(|| {
            AdvError::Format { path: path.display().to_string(), reason: "empty report".into() }
        })??)?;
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                rows.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { rows, provenance })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| AdvError::Data(format!("csv open: {e}")))?;
        w.write_record([
            "dataset",
            "attack",
            "epsilon",
            "model_id",
            "defense_id",
            "accuracy",
            "psnr_db",
            "psnr_inf_excluded",
            "mae",
            "n_images",
        ])
        .map_err(|e| AdvError::Data(format!("csv write: {e}")))?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.attack.clone(),
                r.epsilon.map(|e| format!("{e}")).unwrap_or_default(),
                r.model_id.clone(),
                r.defense_id.clone().unwrap_or_default(),
                format!("{}", r.accuracy),
                r.psnr_db.map(|v| format!("{v}")).unwrap_or_default(),
                format!("{}", r.psnr_inf_excluded),
                r.mae.map(|v| format!("{v}")).unwrap_or_default(),
                format!("{}", r.n_images),
            ])
            .map_err(|e| AdvError::Data(format!("csv write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvaluationReport {
        EvaluationReport {
            rows: vec![ReportRow {
                dataset: "synthetic".into(),
                attack: "fgsm".into(),
                epsilon: Some(0.3),
                model_id: "convnet-a".into(),
                defense_id: Some("abc".into()),
                accuracy: 93.5,
                psnr_db: Some(21.25),
                psnr_inf_excluded: 0,
                mae: Some(0.031),
                n_images: 1000,
                defense_source_model: None,
            }],
            provenance: Provenance {
                seed: 7,
                manifests: vec!["f00".into()],
                checkpoints: vec!["abc".into()],
                tensor_path: Some(TensorPath::BitExact),
            },
        }
    }

    #[test]
    fn jsonl_round_trip_and_byte_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("r1.jsonl");
        let p2 = dir.path().join("r2.jsonl");
        let report = sample();
        report.write_jsonl(&p1).unwrap();
        report.write_jsonl(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = EvaluationReport::load_jsonl(&p1).unwrap();
        assert_eq!(back.rows, report.rows);
    }

    #[test]
    fn csv_has_one_line_per_row_plus_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        sample().write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("fgsm"));
    }
}
