//! Strided convolution and transposed convolution via im2col + GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;

use super::init::WeightInit;
use super::{ParamCollect, CHUNK};

/// Lowers one sample `(C, H, W)` into columns `(C*k*k, ho*wo)` for a
/// convolution with the given kernel/stride/padding. Every entry is written,
/// so the buffer does not need zeroing between samples.
fn im2col(x: &ArrayView3<f32>, k: usize, stride: usize, pad: usize, cols: &mut Array2<f32>) {
    let (c, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    debug_assert_eq!(cols.dim(), (c * k * k, ho * wo));
    let xs = x.as_slice().expect("im2col input must be contiguous");
    let cs = cols.as_slice_mut().expect("col buffer must be contiguous");
    for ch in 0..c {
        let plane = &xs[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out = &mut cs[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *o = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `(C, H, W)`
/// sample. The output must be pre-zeroed (or hold values to accumulate on).
fn col2im_add(cols: &ArrayView2<f32>, k: usize, stride: usize, pad: usize, out: &mut [f32], c: usize, h: usize, w: usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    debug_assert_eq!(cols.dim(), (c * k * k, ho * wo));
    let cs = cols.as_slice().expect("col buffer must be contiguous");
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &cs[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}


/// Views with standard layout pass through; anything else is copied once.
fn standard<'a>(x: &'a Array4<f32>) -> std::borrow::Cow<'a, Array4<f32>> {
    if x.is_standard_layout() {
        std::borrow::Cow::Borrowed(x)
    } else {
        std::borrow::Cow::Owned(x.as_standard_layout().into_owned())
    }
}

/// 2-D convolution, weights `(C_out, C_in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f32>,
    pub b: Array1<f32>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        Self {
            w: init.sample4((c_out, c_in, k, k), fan_in, rng),
            b: Array1::zeros(c_out),
            stride,
            pad,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array4::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        ((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let x = standard(x);
        let x = x.as_ref();
        let (n, c_in, h, w) = x.dim();
        let (c_out, c_in_w, k, _) = self.w.dim();
        assert_eq!(c_in, c_in_w, "conv input channels mismatch");
        let (ho, wo) = self.out_hw(h, w);
        let l = ho * wo;
        let w_mat = self.w.to_shape((c_out, c_in * k * k)).unwrap();
        let mut y = Array4::zeros((n, c_out, ho, wo));

        y.axis_chunks_iter_mut(Axis(0), CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .for_each(|(mut yc, xc)| {
                let mut cols = Array2::zeros((c_in * k * k, l));
                for i in 0..xc.len_of(Axis(0)) {
                    im2col(&xc.index_axis(Axis(0), i), k, self.stride, self.pad, &mut cols);
                    let mut yv = yc
                        .index_axis_mut(Axis(0), i)
                        .into_shape_with_order((c_out, l))
                        .unwrap();
                    general_mat_mul(1.0, &w_mat.view(), &cols.view(), 0.0, &mut yv);
                    for (co, mut row) in yv.rows_mut().into_iter().enumerate() {
                        let bias = self.b[co];
                        row.mapv_inplace(|v| v + bias);
                    }
                }
            });
        y
    }

    /// Backward pass. Returns the input gradient; accumulates weight/bias
    /// gradients into `grads` when given. Chunk-local weight gradients are
    /// reduced in chunk order, independent of thread scheduling.
    pub fn backward(
        &self,
        x: &Array4<f32>,
        gy: &Array4<f32>,
        grads: Option<&mut Conv2d>,
    ) -> Array4<f32> {
        let x = standard(x);
        let x = x.as_ref();
        let gy = standard(gy);
        let gy = gy.as_ref();
        let (n, c_in, h, w) = x.dim();
        let (c_out, _, k, _) = self.w.dim();
        let (ho, wo) = self.out_hw(h, w);
        let l = ho * wo;
        assert_eq!(gy.dim(), (n, c_out, ho, wo), "conv backward shape mismatch");
        let w_mat = self.w.to_shape((c_out, c_in * k * k)).unwrap();
        let want_w = grads.is_some();
        let mut gx = Array4::zeros((n, c_in, h, w));

        let locals: Vec<(Array2<f32>, Array1<f32>)> = gx
            .axis_chunks_iter_mut(Axis(0), CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .zip(gy.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .map(|((mut gxc, xc), gyc)| {
                let mut cols = Array2::zeros((c_in * k * k, l));
                let mut dcols = Array2::zeros((c_in * k * k, l));
                let mut dw = Array2::zeros((c_out, c_in * k * k));
                let mut db = Array1::zeros(c_out);
                for i in 0..xc.len_of(Axis(0)) {
                    let gyv =
                        gyc.index_axis(Axis(0), i).into_shape_with_order((c_out, l)).unwrap();
                    // input gradient: cols^T route
                    general_mat_mul(1.0, &w_mat.t(), &gyv, 0.0, &mut dcols);
                    let mut gxs = gxc.index_axis_mut(Axis(0), i);
                    col2im_add(
                        &dcols.view(),
                        k,
                        self.stride,
                        self.pad,
                        gxs.as_slice_mut().unwrap(),
                        c_in,
                        h,
                        w,
                    );
                    if want_w {
                        im2col(&xc.index_axis(Axis(0), i), k, self.stride, self.pad, &mut cols);
                        general_mat_mul(1.0, &gyv, &cols.t(), 1.0, &mut dw);
                        for (co, row) in gyv.rows().into_iter().enumerate() {
                            db[co] += row.sum();
                        }
                    }
                }
                (dw, db)
            })
            .collect();

        if let Some(g) = grads {
            let mut gw = g.w.view_mut().into_shape_with_order((c_out, c_in * k * k)).unwrap();
            for (dw, db) in locals {
                gw += &dw;
                g.b += &db;
            }
        }
        gx
    }
}

impl ParamCollect for Conv2d {
    fn learnables(&self) -> Vec<&[f32]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        vec![
            ("w".into(), self.w.as_slice().unwrap()),
            ("b".into(), self.b.as_slice().unwrap()),
        ]
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        vec![
            ("w".into(), self.w.as_slice_mut().unwrap()),
            ("b".into(), self.b.as_slice_mut().unwrap()),
        ]
    }
}

/// Transposed 2-D convolution (fractionally strided upsampling), weights
/// `(C_in, C_out, k, k)`. Forward is the exact adjoint of [`Conv2d`] with
/// the same kernel/stride/padding.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: Array4<f32>,
    pub b: Array1<f32>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        Self {
            w: init.sample4((c_in, c_out, k, k), fan_in, rng),
            b: Array1::zeros(c_out),
            stride,
            pad,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array4::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        ((h - 1) * self.stride + k - 2 * self.pad, (w - 1) * self.stride + k - 2 * self.pad)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let x = standard(x);
        let x = x.as_ref();
        let (n, c_in, h, w) = x.dim();
        let (c_in_w, c_out, k, _) = self.w.dim();
        assert_eq!(c_in, c_in_w, "conv-transpose input channels mismatch");
        let (ho, wo) = self.out_hw(h, w);
        let l_in = h * w;
        let w_mat = self.w.to_shape((c_in, c_out * k * k)).unwrap();
        let mut y = Array4::zeros((n, c_out, ho, wo));

        y.axis_chunks_iter_mut(Axis(0), CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .for_each(|(mut yc, xc)| {
                let mut cols = Array2::zeros((c_out * k * k, l_in));
                for i in 0..xc.len_of(Axis(0)) {
                    let xv = xc.index_axis(Axis(0), i).into_shape_with_order((c_in, l_in)).unwrap();
                    general_mat_mul(1.0, &w_mat.t(), &xv, 0.0, &mut cols);
                    let mut ys = yc.index_axis_mut(Axis(0), i);
                    {
                        let out = ys.as_slice_mut().unwrap();
                        out.fill(0.0);
                        col2im_add(&cols.view(), k, self.stride, self.pad, out, c_out, ho, wo);
                    }
                    for (co, mut plane) in ys.outer_iter_mut().enumerate() {
                        let bias = self.b[co];
                        plane.mapv_inplace(|v| v + bias);
                    }
                }
            });
        y
    }

    pub fn backward(
        &self,
        x: &Array4<f32>,
        gy: &Array4<f32>,
        grads: Option<&mut ConvTranspose2d>,
    ) -> Array4<f32> {
        let x = standard(x);
        let x = x.as_ref();
        let gy = standard(gy);
        let gy = gy.as_ref();
        let (n, c_in, h, w) = x.dim();
        let (_, c_out, k, _) = self.w.dim();
        let (ho, wo) = self.out_hw(h, w);
        let l_in = h * w;
        assert_eq!(gy.dim(), (n, c_out, ho, wo), "conv-transpose backward shape mismatch");
        let w_mat = self.w.to_shape((c_in, c_out * k * k)).unwrap();
        let want_w = grads.is_some();
        let mut gx = Array4::zeros((n, c_in, h, w));

        let locals: Vec<(Array2<f32>, Array1<f32>)> = gx
            .axis_chunks_iter_mut(Axis(0), CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .zip(gy.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .map(|((mut gxc, xc), gyc)| {
                let mut gcols = Array2::zeros((c_out * k * k, l_in));
                let mut dw = Array2::zeros((c_in, c_out * k * k));
                let mut db = Array1::zeros(c_out);
                for i in 0..xc.len_of(Axis(0)) {
                    // gradient flows through col2im's adjoint, which is im2col
                    im2col(&gyc.index_axis(Axis(0), i), k, self.stride, self.pad, &mut gcols);
                    let mut gxv = gxc
                        .index_axis_mut(Axis(0), i)
                        .into_shape_with_order((c_in, l_in))
                        .unwrap();
                    general_mat_mul(1.0, &w_mat.view(), &gcols.view(), 0.0, &mut gxv);
                    if want_w {
                        let xv =
                            xc.index_axis(Axis(0), i).into_shape_with_order((c_in, l_in)).unwrap();
                        general_mat_mul(1.0, &xv, &gcols.t(), 1.0, &mut dw);
                        for (co, plane) in gyc.index_axis(Axis(0), i).outer_iter().enumerate() {
                            db[co] += plane.sum();
                        }
                    }
                }
                (dw, db)
            })
            .collect();

        if let Some(g) = grads {
            let mut gw = g.w.view_mut().into_shape_with_order((c_in, c_out * k * k)).unwrap();
            for (dw, db) in locals {
                gw += &dw;
                g.b += &db;
            }
        }
        gx
    }
}

impl ParamCollect for ConvTranspose2d {
    fn learnables(&self) -> Vec<&[f32]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        vec![
            ("w".into(), self.w.as_slice().unwrap()),
            ("b".into(), self.b.as_slice().unwrap()),
        ]
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        vec![
            ("w".into(), self.w.as_slice_mut().unwrap()),
            ("b".into(), self.b.as_slice_mut().unwrap()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{reference, rng_stream};
    use ndarray::Array4;
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = rng_stream(seed, 0);
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0f32))
    }

    #[test]
    fn conv_forward_matches_f64_reference() {
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 4), (1, 0, 3)] {
            let mut rng = rng_stream(42, stride as u64 * 10 + pad as u64);
            let conv = Conv2d::new(3, 5, k, stride, pad, WeightInit::Normal(0.5), &mut rng);
            let x = rand4((9, 3, 8, 8), 7);
            let y = conv.forward(&x);
            let y_ref = reference::conv2d(
                &x.mapv(f64::from),
                &conv.w.mapv(f64::from),
                &conv.b.mapv(f64::from),
                stride,
                pad,
            );
            let max_diff = (&y.mapv(f64::from) - &y_ref).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max_diff < 1e-4, "stride {stride} pad {pad}: diff {max_diff}");
        }
    }

    #[test]
    fn conv_transpose_forward_matches_f64_reference() {
        let mut rng = rng_stream(1, 2);
        let convt = ConvTranspose2d::new(4, 3, 4, 2, 1, WeightInit::Normal(0.5), &mut rng);
        let x = rand4((5, 4, 7, 7), 3);
        let y = convt.forward(&x);
        assert_eq!(y.dim(), (5, 3, 14, 14));
        let y_ref = reference::conv_transpose2d(
            &x.mapv(f64::from),
            &convt.w.mapv(f64::from),
            &convt.b.mapv(f64::from),
            2,
            1,
        );
        let max_diff = (&y.mapv(f64::from) - &y_ref).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_diff < 1e-4, "diff {max_diff}");
    }

    // The backward pass must be the exact adjoint of forward:
    // <y_grad, forward(x)> == <backward(y_grad), x> for linear ops (bias removed).
    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        let mut rng = rng_stream(5, 6);
        let mut conv = Conv2d::new(2, 4, 3, 2, 1, WeightInit::Normal(0.5), &mut rng);
        conv.b.fill(0.0);
        let x = rand4((3, 2, 9, 9), 11);
        let y = conv.forward(&x);
        let gy = rand4(y.dim(), 12);
        let gx = conv.backward(&x, &gy, None);
        let lhs: f64 = gy.iter().zip(y.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let rhs: f64 = gx.iter().zip(x.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_weight_gradient_matches_finite_difference() {
        let mut rng = rng_stream(9, 1);
        let conv = Conv2d::new(2, 3, 3, 1, 1, WeightInit::Normal(0.5), &mut rng);
        let x = rand4((2, 2, 5, 5), 21);
        let y = conv.forward(&x);
        // loss = sum(y^2)/2 so gy = y
        let mut grads = conv.zeros_like();
        conv.backward(&x, &y, Some(&mut grads));
        let loss = |c: &Conv2d| -> f64 {
            let y = reference::conv2d(
                &x.mapv(f64::from),
                &c.w.mapv(f64::from),
                &c.b.mapv(f64::from),
                1,
                1,
            );
            y.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        for &(idx, h) in &[([0usize, 0, 0, 0], 1e-3f32), ([2, 1, 2, 2], 1e-3)] {
            let mut hi = conv.clone();
            hi.w[idx] += h;
            let mut lo = conv.clone();
            lo.w[idx] -= h;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * h as f64);
            let an = grads.w[idx] as f64;
            assert!(
                (fd - an).abs() / (an.abs() + 1e-3) < 1e-2,
                "weight grad mismatch: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn conv_transpose_backward_is_adjoint() {
        let mut rng = rng_stream(15, 16);
        let mut convt = ConvTranspose2d::new(3, 2, 4, 2, 1, WeightInit::Normal(0.5), &mut rng);
        convt.b.fill(0.0);
        let x = rand4((2, 3, 6, 6), 31);
        let y = convt.forward(&x);
        let gy = rand4(y.dim(), 32);
        let gx = convt.backward(&x, &gy, None);
        let lhs: f64 = gy.iter().zip(y.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let rhs: f64 = gx.iter().zip(x.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn chunked_parallelism_is_batch_invariant() {
        // Results for one sample must not depend on the rest of the batch.
        let mut rng = rng_stream(77, 0);
        let conv = Conv2d::new(1, 4, 3, 1, 1, WeightInit::Normal(0.5), &mut rng);
        let big = rand4((19, 1, 8, 8), 70);
        let y_big = conv.forward(&big);
        let one = big.slice(ndarray::s![4..5, .., .., ..]).to_owned();
        let y_one = conv.forward(&one);
        assert_eq!(
            y_big.slice(ndarray::s![4..5, .., .., ..]).to_owned(),
            y_one,
            "per-sample results must be independent of batch composition"
        );
    }
}
