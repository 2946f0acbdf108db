//! Lossless binary tensor container.
//!
//! Layout: magic, format version, dtype code, rank, dims, then the
//! row-major payload in little-endian. 32-bit floats round-trip bit-exactly;
//! there is no quantization anywhere on this path.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, ArrayD, ArrayViewD};

use crate::error::{AdvError, Result};

const MAGIC: &[u8; 8] = b"ADVLTNSR";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const DTYPE_U32: u8 = 2;

fn format_err(path: &Path, reason: impl Into<String>) -> AdvError {
    AdvError::Format { path: path.display().to_string(), reason: reason.into() }
}

fn write_header(w: &mut impl Write, dtype: u8, shape: &[usize]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype, shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path, expect_dtype: u8) -> Result<Vec<usize>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| format_err(path, "file too short for magic"))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic bytes"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut meta = [0u8; 2];
    r.read_exact(&mut meta)?;
    if meta[0] != expect_dtype {
        return Err(format_err(path, format!("dtype code {} does not match", meta[0])));
    }
    let rank = meta[1] as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf).map_err(|_| format_err(path, "truncated shape"))?;
        dims.push(u64::from_le_bytes(u64buf) as usize);
    }
    Ok(dims)
}

pub fn save_f32(path: &Path, tensor: ArrayViewD<'_, f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, DTYPE_F32, tensor.shape())?;
    let owned;
    let slice = match tensor.as_slice() {
        Some(s) => s,
        None => {
            owned = tensor.to_owned();
            owned.as_slice().unwrap()
        }
    };
    for &v in slice {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_f32(path: &Path) -> Result<ArrayD<f32>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let dims = read_header(&mut r, path, DTYPE_F32)?;
    let count: usize = dims.iter().product();
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|_| format_err(path, "truncated payload"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after payload"));
    }
    let data: Vec<f32> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(&dims), data)
        .map_err(|e| format_err(path, format!("shape error: {e}")))
}

pub fn save_u32(path: &Path, values: &Array1<u32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, DTYPE_U32, &[values.len()])?;
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_u32(path: &Path) -> Result<Array1<u32>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let dims = read_header(&mut r, path, DTYPE_U32)?;
    if dims.len() != 1 {
        return Err(format_err(path, "expected a rank-1 u32 tensor"));
    }
    let mut bytes = vec![0u8; dims[0] * 4];
    r.read_exact(&mut bytes).map_err(|_| format_err(path, "truncated payload"))?;
    let data: Vec<u32> =
        bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Array1::from_vec(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.tensor");
        let mut rng = crate::nn::rng_stream(3, 3);
        let t = Array4::from_shape_fn((4, 1, 5, 5), |_| rng.random_range(-1.0..1.0f32));
        save_f32(&path, t.view().into_dyn()).unwrap();
        let back = load_f32(&path).unwrap();
        assert_eq!(back.shape(), &[4, 1, 5, 5]);
        let max_diff = t
            .into_dyn()
            .iter()
            .zip(back.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn u32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.tensor");
        let v = Array1::from_vec(vec![0u32, 7, 9, 3]);
        save_u32(&path, &v).unwrap();
        assert_eq!(load_u32(&path).unwrap(), v);
    }

    #[test]
    fn corrupted_header_fails_without_partial_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.tensor");
        let t = Array4::<f32>::zeros((2, 1, 3, 3));
        save_f32(&path, t.view().into_dyn()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] ^= 0x55;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_f32(&path).is_err());
        // truncation is also rejected
        std::fs::write(&path, &std::fs::read(&path).unwrap()[..20]).unwrap();
        assert!(load_f32(&path).is_err());
    }
}
