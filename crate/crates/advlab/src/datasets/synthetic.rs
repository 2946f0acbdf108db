//! Built-in synthetic digit glyphs: a seeded, self-contained 10-class
//! grayscale dataset at MNIST geometry (1×28×28 by default).
//!
//! Each sample renders a digit as anti-aliased strokes under a random
//! affine jitter (rotation, anisotropic scale, shear, translation), random
//! stroke thickness and intensity, plus mild pixel noise. Generation is a
//! pure function of `(seed, sample index)`.

use ndarray::{Array1, Array4};
use rand::Rng;

use crate::error::Result;
use crate::nn::rng_stream;

type Point = (f32, f32);

/// Polyline strokes for one glyph, in unit coordinates (y grows downward).
fn glyph_strokes(digit: u8) -> Vec<Vec<Point>> {
    fn arc(cx: f32, cy: f32, rx: f32, ry: f32, deg_from: f32, deg_to: f32, n: usize) -> Vec<Point> {
        (0..=n)
            .map(|i| {
                let t = deg_from + (deg_to - deg_from) * i as f32 / n as f32;
                let rad = t.to_radians();
                (cx + rx * rad.cos(), cy + ry * rad.sin())
            })
            .collect()
    }
    match digit {
        0 => vec![arc(0.5, 0.5, 0.26, 0.36, 0.0, 360.0, 28)],
        1 => vec![vec![(0.38, 0.28), (0.54, 0.13)], vec![(0.54, 0.13), (0.54, 0.88)]],
        2 => vec![
            arc(0.5, 0.32, 0.22, 0.2, 180.0, 360.0, 12),
            vec![(0.72, 0.32), (0.3, 0.86)],
            vec![(0.3, 0.86), (0.74, 0.86)],
        ],
        3 => vec![
            arc(0.47, 0.32, 0.21, 0.19, 150.0, 360.0, 12),
            arc(0.47, 0.68, 0.23, 0.21, 0.0, 210.0, 12),
        ],
        4 => vec![
            vec![(0.64, 0.12), (0.24, 0.6)],
            vec![(0.24, 0.6), (0.8, 0.6)],
            vec![(0.64, 0.12), (0.64, 0.88)],
        ],
        5 => vec![
            vec![(0.72, 0.14), (0.32, 0.14)],
            vec![(0.32, 0.14), (0.3, 0.45)],
            arc(0.48, 0.64, 0.23, 0.23, 160.0, 395.0, 14),
        ],
        6 => vec![
            vec![(0.64, 0.12), (0.42, 0.44)],
            arc(0.48, 0.65, 0.21, 0.22, 0.0, 360.0, 24),
        ],
        7 => vec![vec![(0.26, 0.14), (0.76, 0.14)], vec![(0.76, 0.14), (0.42, 0.88)]],
        8 => vec![
            arc(0.5, 0.32, 0.18, 0.17, 0.0, 360.0, 20),
            arc(0.5, 0.68, 0.22, 0.2, 0.0, 360.0, 20),
        ],
        9 => vec![
            arc(0.52, 0.35, 0.2, 0.2, 0.0, 360.0, 20),
            vec![(0.72, 0.35), (0.6, 0.88)],
        ],
        _ => unreachable!("digit must be 0..=9"),
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f32 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders one digit into `out` (an `h`×`w` plane) with a seeded jitter.
fn render_digit(digit: u8, h: usize, w: usize, rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f32]) {
    // affine jitter about the glyph center
    let angle = rng.random_range(-0.24..0.24f32);
    let scale_x = rng.random_range(0.82..1.12f32);
    let scale_y = rng.random_range(0.82..1.12f32);
    let shear = rng.random_range(-0.15..0.15f32);
    let tx = rng.random_range(-0.08..0.08f32);
    let ty = rng.random_range(-0.08..0.08f32);
    let thickness = rng.random_range(0.05..0.075f32);
    let intensity = rng.random_range(0.78..1.0f32);
    let (sin, cos) = angle.sin_cos();

    let transform = |(x, y): Point| -> Point {
        let (cx, cy) = (x - 0.5, y - 0.5);
        let (cx, cy) = (cx + shear * cy, cy);
        let (cx, cy) = (cx * scale_x, cy * scale_y);
        let (rx, ry) = (cx * cos - cy * sin, cx * sin + cy * cos);
        (rx + 0.5 + tx, ry + 0.5 + ty)
    };

    let aa = 1.0 / h.min(w) as f32;
    for stroke in glyph_strokes(digit) {
        let pts: Vec<Point> = stroke.into_iter().map(transform).collect();
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            // only rasterize inside the segment's padded bounding box
            let pad = thickness + 2.0 * aa;
            let x_min = ((a.0.min(b.0) - pad) * w as f32).floor().max(0.0) as usize;
            let x_max = ((a.0.max(b.0) + pad) * w as f32).ceil().min(w as f32) as usize;
            let y_min = ((a.1.min(b.1) - pad) * h as f32).floor().max(0.0) as usize;
            let y_max = ((a.1.max(b.1) + pad) * h as f32).ceil().min(h as f32) as usize;
            for py in y_min..y_max {
                for px in x_min..x_max {
                    let p = ((px as f32 + 0.5) / w as f32, (py as f32 + 0.5) / h as f32);
                    let d = dist_to_segment(p, a, b);
                    let alpha = ((thickness - d) / aa + 0.5).clamp(0.0, 1.0) * intensity;
                    let cell = &mut out[py * w + px];
                    *cell = cell.max(alpha);
                }
            }
        }
    }
    // mild sensor-style noise
    for v in out.iter_mut() {
        let u1: f32 = rng.random_range(1e-6..1.0);
        let u2: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let noise = (-2.0 * u1.ln()).sqrt() * u2.cos() * 0.02;
        *v = (*v + noise).clamp(0.0, 1.0);
    }
}

/// Generates `n` samples of `h`×`w` digit glyphs. Sample `i` is a pure
/// function of `(seed, i)`; labels cycle through the 10 classes.
pub fn generate(n: usize, h: usize, w: usize, seed: u64) -> Result<(Array4<f32>, Array1<u32>)> {
    let mut images = Array4::zeros((n, 1, h, w));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        labels[i] = digit as u32;
        let mut rng = rng_stream(seed, 0x51A1_0000 ^ i as u64);
        let mut view = images.slice_mut(ndarray::s![i, 0, .., ..]);
        render_digit(digit, h, w, &mut rng, view.as_slice_mut().unwrap());
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let (a, la) = generate(20, 28, 28, 7).unwrap();
        let (b, lb) = generate(20, 28, 28, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn different_seeds_differ() {
        let (a, _) = generate(5, 28, 28, 1).unwrap();
        let (b, _) = generate(5, 28, 28, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn glyphs_have_ink() {
        let (images, labels) = generate(30, 28, 28, 3).unwrap();
        for i in 0..30 {
            let plane = images.slice(ndarray::s![i, 0, .., ..]);
            let ink: f32 = plane.iter().filter(|&&v| v > 0.4).count() as f32;
            assert!(ink > 15.0, "glyph {} (label {}) has almost no ink", i, labels[i]);
        }
    }

    #[test]
    fn labels_are_balanced() {
        let (_, labels) = generate(100, 28, 28, 5).unwrap();
        for class in 0..10u32 {
            assert_eq!(labels.iter().filter(|&&l| l == class).count(), 10);
        }
    }
}
