//! 8-bit PNG export/import — the flagged, non-default path.
//!
//! Quantizing to 8 bits can alter attack efficacy; evaluation pipelines use
//! the bit-exact tensor container instead, and anything that passes through
//! here must carry the quantized-path tag in its report provenance.

use std::path::{Path, PathBuf};

use ndarray::Array4;

use crate::core::ImageBatch;
use crate::error::{AdvError, Result};

/// round-half-up on the 255 scale
fn quantize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Writes one PNG per image as `prefix_{index:05}.png`. Logs a prominent
/// warning: this path quantizes.
pub fn export_png(batch: &ImageBatch, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    log::warn!(
        "PNG export quantizes pixels to 8 bits; quantization can alter attack efficacy. \
         Evaluation pipelines should use the binary tensor path."
    );
    std::fs::create_dir_all(dir)?;
    let (n, c, h, w) = batch.dim();
    let mut paths = Vec::with_capacity(n);
    for i in 0..n {
        let path = dir.join(format!("{prefix}_{i:05}.png"));
        match c {
            1 => {
                let mut img = image::GrayImage::new(w as u32, h as u32);
                for y in 0..h {
                    for x in 0..w {
                        img.put_pixel(
                            x as u32,
                            y as u32,
                            image::Luma([quantize(batch.data()[[i, 0, y, x]])]),
                        );
                    }
                }
                img.save(&path).map_err(|e| AdvError::Data(format!("png encode: {e}")))?;
            }
            3 => {
                let mut img = image::RgbImage::new(w as u32, h as u32);
                for y in 0..h {
                    for x in 0..w {
                        img.put_pixel(
                            x as u32,
                            y as u32,
                            image::Rgb([
                                quantize(batch.data()[[i, 0, y, x]]),
                                quantize(batch.data()[[i, 1, y, x]]),
                                quantize(batch.data()[[i, 2, y, x]]),
                            ]),
                        );
                    }
                }
                img.save(&path).map_err(|e| AdvError::Data(format!("png encode: {e}")))?;
            }
            _ => unreachable!("ImageBatch enforces C in {{1,3}}"),
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Reads PNGs written by [`export_png`], in the given order.
pub fn import_png(paths: &[PathBuf]) -> Result<ImageBatch> {
    if paths.is_empty() {
        return Err(AdvError::Data("no png files to import".into()));
    }
    let first = image::open(&paths[0]).map_err(|e| AdvError::Data(format!("png decode: {e}")))?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let c = match first.color().channel_count() {
        1 => 1,
        _ => 3,
    };
    let mut out = Array4::zeros((paths.len(), c, h, w));
    for (i, path) in paths.iter().enumerate() {
        let img = image::open(path).map_err(|e| AdvError::Data(format!("png decode: {e}")))?;
        if c == 1 {
            let gray = img.to_luma8();
            for y in 0..h {
                for x in 0..w {
                    out[[i, 0, y, x]] = gray.get_pixel(x as u32, y as u32)[0] as f32 / 255.0;
                }
            }
        } else {
            let rgb = img.to_rgb8();
            for y in 0..h {
                for x in 0..w {
                    let p = rgb.get_pixel(x as u32, y as u32);
                    for ch in 0..3 {
                        out[[i, ch, y, x]] = p[ch] as f32 / 255.0;
                    }
                }
            }
        }
    }
    ImageBatch::new(out)
}
