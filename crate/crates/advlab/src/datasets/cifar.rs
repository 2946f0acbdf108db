//! CIFAR-10 binary-batch parsing (`data_batch_*.bin` / `test_batch.bin`).

use std::path::Path;

use ndarray::{Array1, Array4};

use crate::error::{AdvError, Result};

const RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Parses one or more CIFAR-10 binary batch files into `(N, 3, 32, 32)`
/// floats in `[0,1]` plus labels.
pub fn load_cifar_batches(paths: &[std::path::PathBuf]) -> Result<(Array4<f32>, Array1<u32>)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for path in paths {
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
            return Err(AdvError::Format {
                path: path.display().to_string(),
                reason: format!("length {} is not a multiple of {RECORD_LEN}", bytes.len()),
            });
        }
        for record in bytes.chunks_exact(RECORD_LEN) {
            labels.push(record[0] as u32);
            images.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
            n += 1;
        }
    }
    let images = Array4::from_shape_vec((n, 3, 32, 32), images).map_err(|e| {
        AdvError::Format { path: "<cifar batches>".into(), reason: format!("shape error: {e}") }
    })?;
    Ok((images, Array1::from_vec(labels)))
}

/// Standard training-batch file names under `cifar-10-batches-bin/`.
pub fn train_batch_files(root: &Path) -> Vec<std::path::PathBuf> {
    (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect()
}

pub fn test_batch_file(root: &Path) -> std::path::PathBuf {
    root.join("test_batch.bin")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 8] {
            bytes.push(label);
            bytes.extend(std::iter::repeat(128u8).take(3 * 32 * 32));
        }
        std::fs::write(&path, bytes).unwrap();
        let (images, labels) = load_cifar_batches(&[path]).unwrap();
        assert_eq!(images.dim(), (2, 3, 32, 32));
        assert_eq!(labels.to_vec(), vec![3, 8]);
        assert!((images[[0, 1, 5, 5]] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_partial_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        std::fs::write(&path, vec![0u8; RECORD_LEN + 5]).unwrap();
        assert!(load_cifar_batches(&[path]).is_err());
    }
}
