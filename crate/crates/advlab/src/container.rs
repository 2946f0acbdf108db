//! Checkpoint container: a JSON metadata header followed by named `f32`
//! tensor payloads, bit-exact on round-trip.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AdvError, Result};

const MAGIC: &[u8; 8] = b"ADVLCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, reason: impl Into<String>) -> AdvError {
    AdvError::Format { path: path.display().to_string(), reason: reason.into() }
}

/// Writes a header plus named tensors. Tensor order is preserved.
pub fn write_container<H: Serialize>(
    path: &Path,
    header: &H,
    tensors: &[(String, &[f32])],
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let header_bytes = serde_json::to_vec(header)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, data) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(data.len() as u64).to_le_bytes())?;
        for &v in *data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container written by [`write_container`].
pub fn read_container<H: DeserializeOwned>(
    path: &Path,
) -> Result<(H, HashMap<String, Vec<f32>>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| format_err(path, "file too short for magic"))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic bytes"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format version {version}")));
    }
    r.read_exact(&mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|_| format_err(path, "truncated header"))?;
    let header: H = serde_json::from_slice(&header_bytes)?;

    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(|_| format_err(path, "truncated tensor table"))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| format_err(path, "tensor name is not utf-8"))?;
        r.read_exact(&mut u64buf)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| format_err(path, format!("truncated payload for tensor '{name}'")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, data);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after last tensor"));
    }
    Ok((header, tensors))
}

/// Copies loaded tensors into a model's state in walk order, validating that
/// names and lengths line up exactly.
pub fn load_state_into(
    path: &Path,
    mut tensors: HashMap<String, Vec<f32>>,
    state: Vec<(String, &mut [f32])>,
) -> Result<()> {
    for (name, dst) in state {
        let src = tensors.remove(&name).ok_or_else(|| {
            format_err(path, format!("missing tensor '{name}' in checkpoint"))
        })?;
        if src.len() != dst.len() {
            return Err(format_err(
                path,
                format!("tensor '{name}' has {} elements, expected {}", src.len(), dst.len()),
            ));
        }
        dst.copy_from_slice(&src);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(format_err(path, format!("unexpected tensor '{extra}' in checkpoint")));
    }
    Ok(())
}

/// Hex SHA-256 over tensors in walk order; identifies a set of weights.
pub fn fingerprint(tensors: &[(String, &[f32])]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, data) in tensors {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for &v in *data {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Header {
        kind: String,
        seed: u64,
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a: Vec<f32> = vec![0.1, -2.5e-8, f32::MIN_POSITIVE, 1.0];
        let b: Vec<f32> = vec![std::f32::consts::PI; 7];
        let header = Header { kind: "test".into(), seed: 7 };
        write_container(&path, &header, &[("a".into(), &a[..]), ("b".into(), &b[..])]).unwrap();
        let (h2, tensors) = read_container::<Header>(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(tensors["a"], a);
        assert_eq!(tensors["b"], b);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_container(&path, &Header { kind: "x".into(), seed: 0 }, &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(read_container::<Header>(&path).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a: Vec<f32> = vec![1.0; 16];
        write_container(&path, &Header { kind: "x".into(), seed: 0 }, &[("a".into(), &a[..])])
            .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_container::<Header>(&path).is_err());
    }
}
