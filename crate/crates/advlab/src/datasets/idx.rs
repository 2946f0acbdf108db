//! IDX file parsing (MNIST / Fashion-MNIST distribution format).

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array4};

use crate::error::{AdvError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, reason: impl Into<String>) -> AdvError {
    AdvError::Format { path: path.display().to_string(), reason: reason.into() }
}

/// Reads a file, transparently gunzipping when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoder = flate2::read::GzDecoder::new(&raw[..]);
        let mut out = Vec::new();
        decoder
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, format!("gzip decode failed: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses an idx3-ubyte image file into `(N, 1, H, W)` floats in `[0,1]`.
pub fn load_idx_images(path: &Path) -> Result<Array4<f32>> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 16 {
        return Err(format_err(path, "file too short for an idx3 header"));
    }
    if be_u32(&bytes, 0) != IMAGES_MAGIC {
        return Err(format_err(path, "not an idx3-ubyte image file"));
    }
    let n = be_u32(&bytes, 4) as usize;
    let h = be_u32(&bytes, 8) as usize;
    let w = be_u32(&bytes, 12) as usize;
    let expected = 16 + n * h * w;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Array4::from_shape_vec((n, 1, h, w), data)
        .map_err(|e| format_err(path, format!("shape error: {e}")))
}

/// Parses an idx1-ubyte label file.
pub fn load_idx_labels(path: &Path) -> Result<Array1<u32>> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 8 {
        return Err(format_err(path, "file too short for an idx1 header"));
    }
    if be_u32(&bytes, 0) != LABELS_MAGIC {
        return Err(format_err(path, "not an idx1-ubyte label file"));
    }
    let n = be_u32(&bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(format_err(path, "label payload length mismatch"));
    }
    Ok(Array1::from_vec(bytes[8..].iter().map(|&b| b as u32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx3(path: &Path, n: usize, h: usize, w: usize, gz: bool) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(n as u32).to_be_bytes());
        bytes.extend_from_slice(&(h as u32).to_be_bytes());
        bytes.extend_from_slice(&(w as u32).to_be_bytes());
        for i in 0..n * h * w {
            bytes.push((i % 256) as u8);
        }
        if gz {
            let mut enc =
                flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
            enc.write_all(&bytes).unwrap();
            std::fs::write(path, enc.finish().unwrap()).unwrap();
        } else {
            std::fs::write(path, bytes).unwrap();
        }
    }

    #[test]
    fn parses_plain_and_gzipped_idx3() {
        let dir = tempfile::tempdir().unwrap();
        for gz in [false, true] {
            let path = dir.path().join(if gz { "img.gz" } else { "img" });
            write_idx3(&path, 3, 4, 4, gz);
            let images = load_idx_images(&path).unwrap();
            assert_eq!(images.dim(), (3, 1, 4, 4));
            assert!((images[[0, 0, 0, 1]] - 1.0 / 255.0).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        write_idx3(&path, 2, 3, 3, false);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[2] = 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_idx_images(&path).is_err());

        write_idx3(&path, 2, 3, 3, false);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load_idx_images(&path).is_err());
    }

    #[test]
    fn parses_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 0, 9]);
        std::fs::write(&path, bytes).unwrap();
        let labels = load_idx_labels(&path).unwrap();
        assert_eq!(labels.to_vec(), vec![7, 0, 9]);
    }
}
