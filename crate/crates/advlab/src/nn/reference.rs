//! Naive `f64` implementations of every network op.
//!
//! These run orders of magnitude slower than the GEMM-based layers and exist
//! for two purposes: as independent oracles the fast path is tested against,
//! and as the high-precision forward used by finite-difference gradient
//! checks, where `f32` evaluation noise would swamp the difference quotient.

use ndarray::{Array1, Array2, Array4};

/// Plain nested-loop convolution, weights `(C_out, C_in, k, k)`.
pub fn conv2d(
    x: &Array4<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, c_in, h, wd) = x.dim();
    let (c_out, c_in_w, k, _) = w.dim();
    assert_eq!(c_in, c_in_w);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut y = Array4::zeros((n, c_out, ho, wo));
    for ni in 0..n {
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                    acc += x[[ni, ci, iy as usize, ix as usize]]
                                        * w[[co, ci, ky, kx]];
                                }
                            }
                        }
                    }
                    y[[ni, co, oy, ox]] = acc;
                }
            }
        }
    }
    y
}

/// Plain transposed convolution, weights `(C_in, C_out, k, k)`: every input
/// element scatters a `k x k` stamp into the output.
pub fn conv_transpose2d(
    x: &Array4<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, c_in, h, wd) = x.dim();
    let (c_in_w, c_out, k, _) = w.dim();
    assert_eq!(c_in, c_in_w);
    let ho = (h - 1) * stride + k - 2 * pad;
    let wo = (wd - 1) * stride + k - 2 * pad;
    let mut y = Array4::zeros((n, c_out, ho, wo));
    for ni in 0..n {
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    y[[ni, co, oy, ox]] = b[co];
                }
            }
        }
        for ci in 0..c_in {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x[[ni, ci, iy, ix]];
                    for co in 0..c_out {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && oy < ho as isize && ox >= 0 && ox < wo as isize {
                                    y[[ni, co, oy as usize, ox as usize]] +=
                                        v * w[[ci, co, ky, kx]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn maxpool2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, ho, wo));
    for ni in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            best = best.max(x[[ni, ch, oy * 2 + dy, ox * 2 + dx]]);
                        }
                    }
                    y[[ni, ch, oy, ox]] = best;
                }
            }
        }
    }
    y
}

pub fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

pub fn relu4(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu2(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn leaky_relu(x: &Array4<f64>, slope: f64) -> Array4<f64> {
    x.mapv(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn sigmoid(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Batch-statistics normalization (training mode), biased variance.
pub fn batchnorm_train(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    eps: f64,
) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let m = (n * h * w) as f64;
    let mut y = x.clone();
    for ch in 0..c {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for ni in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[[ni, ch, iy, ix]];
                    s += v;
                    s2 += v * v;
                }
            }
        }
        let mu = s / m;
        let var = (s2 / m - mu * mu).max(0.0);
        let inv = 1.0 / (var + eps).sqrt();
        for ni in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    y[[ni, ch, iy, ix]] = gamma[ch] * (x[[ni, ch, iy, ix]] - mu) * inv + beta[ch];
                }
            }
        }
    }
    y
}

/// Eval-mode normalization from running statistics.
pub fn batchnorm_eval(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
    eps: f64,
) -> Array4<f64> {
    let (_, c, _, _) = x.dim();
    let mut y = x.clone();
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        y.index_axis_mut(ndarray::Axis(1), ch).mapv_inplace(|v| v * scale + shift);
    }
    y
}
