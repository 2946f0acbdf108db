//! Non-convolutional layers: batch norm, pooling, linear, dropout, and
//! activation functions.

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::init::WeightInit;
use super::ParamCollect;

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Training forward uses batch statistics and returns a cache; the caller
/// decides when to fold the batch statistics into the running estimates via
/// [`BatchNorm2d::update_running`]. Eval forward is a pure per-channel
/// affine map from the running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
}

/// Forward intermediates needed by the batch-norm backward pass.
pub struct BnCache {
    pub xhat: Array4<f32>,
    pub inv_std: Array1<f32>,
    pub mean: Array1<f32>,
    pub var_biased: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        Self {
            gamma: Array1::zeros(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::zeros(c),
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    pub fn forward_train(&self, x: &Array4<f32>) -> (Array4<f32>, BnCache) {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        // per-channel statistics, f64 accumulation in fixed order
        for ch in 0..c {
            let mut s = 0.0f64;
            let mut s2 = 0.0f64;
            for ni in 0..n {
                let plane = x.slice(ndarray::s![ni, ch, .., ..]);
                let sl = plane.to_slice().unwrap();
                for &v in sl {
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                }
            }
            let mu = s / m;
            mean[ch] = mu as f32;
            var[ch] = ((s2 / m) - mu * mu).max(0.0) as f32;
        }
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        xhat.axis_iter_mut(Axis(1)).into_par_iter().enumerate().for_each(|(ch, mut lane)| {
            let mu = mean[ch];
            let is = inv_std[ch];
            lane.mapv_inplace(|v| (v - mu) * is);
        });
        let mut y = xhat.clone();
        y.axis_iter_mut(Axis(1)).into_par_iter().enumerate().for_each(|(ch, mut lane)| {
            let g = self.gamma[ch];
            let b = self.beta[ch];
            lane.mapv_inplace(|v| g * v + b);
        });
        (y, BnCache { xhat, inv_std, mean, var_biased: var })
    }

    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut y = x.clone();
        y.axis_iter_mut(Axis(1)).into_par_iter().enumerate().for_each(|(ch, mut lane)| {
            let scale = self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt();
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            lane.mapv_inplace(|v| v * scale + shift);
        });
        y
    }

    /// Folds the cached batch statistics into the running estimates
    /// (unbiased variance, torch convention).
    pub fn update_running(&mut self, cache: &BnCache, batch_elems: usize) {
        let m = batch_elems as f32;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..self.gamma.len() {
            self.running_mean[ch] =
                (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * cache.mean[ch];
            self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch]
                + self.momentum * cache.var_biased[ch] * unbias;
        }
    }

    /// Backward through the batch statistics. Returns the input gradient and
    /// accumulates gamma/beta gradients when `grads` is given.
    pub fn backward(
        &self,
        cache: &BnCache,
        gy: &Array4<f32>,
        mut grads: Option<&mut BatchNorm2d>,
    ) -> Array4<f32> {
        let (n, c, h, w) = gy.dim();
        let m = (n * h * w) as f64;
        let mut gx = Array4::zeros((n, c, h, w));
        // per-channel reductions first (fixed order), then the elementwise pass
        let mut sum_gy = vec![0.0f64; c];
        let mut sum_gy_xhat = vec![0.0f64; c];
        for ch in 0..c {
            let mut s = 0.0f64;
            let mut sx = 0.0f64;
            for ni in 0..n {
                let g = gy.slice(ndarray::s![ni, ch, .., ..]);
                let xh = cache.xhat.slice(ndarray::s![ni, ch, .., ..]);
                for (&gv, &xv) in g.to_slice().unwrap().iter().zip(xh.to_slice().unwrap()) {
                    s += gv as f64;
                    sx += gv as f64 * xv as f64;
                }
            }
            sum_gy[ch] = s;
            sum_gy_xhat[ch] = sx;
        }
        if let Some(g) = grads.as_deref_mut() {
            for ch in 0..c {
                g.gamma[ch] += sum_gy_xhat[ch] as f32;
                g.beta[ch] += sum_gy[ch] as f32;
            }
        }
        gx.axis_iter_mut(Axis(1))
            .into_par_iter()
            .enumerate()
            .for_each(|(ch, mut lane)| {
                let coef = self.gamma[ch] as f64 * cache.inv_std[ch] as f64 / m;
                let sg = sum_gy[ch];
                let sgx = sum_gy_xhat[ch];
                for ni in 0..n {
                    let gyv = gy.slice(ndarray::s![ni, ch, .., ..]);
                    let xhv = cache.xhat.slice(ndarray::s![ni, ch, .., ..]);
                    let mut out = lane.index_axis_mut(Axis(0), ni);
                    for ((o, &gv), &xv) in out
                        .iter_mut()
                        .zip(gyv.to_slice().unwrap())
                        .zip(xhv.to_slice().unwrap())
                    {
                        *o = (coef * (m * gv as f64 - sg - xv as f64 * sgx)) as f32;
                    }
                }
            });
        gx
    }
}

impl ParamCollect for BatchNorm2d {
    fn learnables(&self) -> Vec<&[f32]> {
        vec![self.gamma.as_slice().unwrap(), self.beta.as_slice().unwrap()]
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        vec![self.gamma.as_slice_mut().unwrap(), self.beta.as_slice_mut().unwrap()]
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        vec![
            ("gamma".into(), self.gamma.as_slice().unwrap()),
            ("beta".into(), self.beta.as_slice().unwrap()),
            ("running_mean".into(), self.running_mean.as_slice().unwrap()),
            ("running_var".into(), self.running_var.as_slice().unwrap()),
        ]
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        vec![
            ("gamma".into(), self.gamma.as_slice_mut().unwrap()),
            ("beta".into(), self.beta.as_slice_mut().unwrap()),
            ("running_mean".into(), self.running_mean.as_slice_mut().unwrap()),
            ("running_var".into(), self.running_var.as_slice_mut().unwrap()),
        ]
    }
}

/// 2x2 max pooling with stride 2. Caches argmax positions for backward.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d;

pub struct PoolCache {
    pub argmax: Array4<u32>,
    pub in_hw: (usize, usize),
}

impl MaxPool2d {
    pub fn forward(x: &Array4<f32>) -> (Array4<f32>, PoolCache) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Array4::zeros((n, c, ho, wo));
        let mut arg = Array4::zeros((n, c, ho, wo));
        for ni in 0..n {
            for ch in 0..c {
                let plane = x.slice(ndarray::s![ni, ch, .., ..]);
                let ps = plane.to_slice().unwrap();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0u32;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let iy = oy * 2 + dy;
                                let ix = ox * 2 + dx;
                                let v = ps[iy * w + ix];
                                if v > best {
                                    best = v;
                                    best_idx = (iy * w + ix) as u32;
                                }
                            }
                        }
                        y[[ni, ch, oy, ox]] = best;
                        arg[[ni, ch, oy, ox]] = best_idx;
                    }
                }
            }
        }
        (y, PoolCache { argmax: arg, in_hw: (h, w) })
    }

    pub fn backward(cache: &PoolCache, gy: &Array4<f32>) -> Array4<f32> {
        let (n, c, ho, wo) = gy.dim();
        let (h, w) = cache.in_hw;
        let mut gx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let flat = cache.argmax[[ni, ch, oy, ox]] as usize;
                        gx[[ni, ch, flat / w, flat % w]] += gy[[ni, ch, oy, ox]];
                    }
                }
            }
        }
        gx
    }
}

/// Fully connected layer, weights `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, init: WeightInit, rng: &mut ChaCha8Rng) -> Self {
        Self { w: init.sample2((d_out, d_in), d_in, rng), b: Array1::zeros(d_out) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.dim()), b: Array1::zeros(self.b.len()) }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.w.t()) + &self.b
    }

    pub fn backward(
        &self,
        x: &Array2<f32>,
        gy: &Array2<f32>,
        grads: Option<&mut Linear>,
    ) -> Array2<f32> {
        if let Some(g) = grads {
            g.w += &gy.t().dot(x);
            g.b += &gy.sum_axis(Axis(0));
        }
        gy.dot(&self.w)
    }
}

impl ParamCollect for Linear {
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

pub fn relu_forward(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array4<f32>, gy: &Array4<f32>) -> Array4<f32> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn leaky_relu_forward(x: &Array4<f32>, slope: f32) -> Array4<f32> {
    x.mapv(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Array4<f32>, gy: &Array4<f32>, slope: f32) -> Array4<f32> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v < 0.0 {
            *g *= slope;
        }
    });
    gx
}

pub fn sigmoid_forward(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward given the forward *output* `y`.
pub fn sigmoid_backward(y: &Array4<f32>, gy: &Array4<f32>) -> Array4<f32> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &v| {
        *g *= v * (1.0 - v);
    });
    gx
}

/// Inverted dropout: scales kept units by `1/(1-rate)` during training.
/// Returns the output and the mask (multiply gradients by the mask in the
/// backward pass). `rate == 0` keeps everything with a unit mask.
pub fn dropout_forward(x: &Array4<f32>, rate: f32, rng: &mut ChaCha8Rng) -> (Array4<f32>, Array4<f32>) {
    if rate <= 0.0 {
        return (x.clone(), Array4::ones(x.dim()));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask = Array4::from_shape_fn(x.dim(), |_| {
        if rng.random_range(0.0..1.0f32) < keep {
            scale
        } else {
            0.0
        }
    });
    (x * &mask, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{reference, rng_stream};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = rng_stream(seed, 1);
        Array4::from_shape_fn(shape, |_| rng.random_range(-2.0..2.0f32))
    }

    #[test]
    fn batchnorm_train_matches_reference_and_normalizes() {
        let bn = BatchNorm2d::new(3);
        let x = rand4((6, 3, 4, 4), 2);
        let (y, cache) = bn.forward_train(&x);
        let y_ref = reference::batchnorm_train(
            &x.mapv(f64::from),
            &bn.gamma.mapv(f64::from),
            &bn.beta.mapv(f64::from),
            bn.eps as f64,
        );
        let max_diff = (&y.mapv(f64::from) - &y_ref).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_diff < 1e-4, "diff {max_diff}");
        // normalized activations should have ~zero mean per channel
        for ch in 0..3 {
            let lane = cache.xhat.index_axis(Axis(1), ch);
            let mean: f32 = lane.sum() / lane.len() as f32;
            assert!(mean.abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_difference() {
        let bn = BatchNorm2d::new(2);
        let x = rand4((4, 2, 3, 3), 3);
        let (y, cache) = bn.forward_train(&x);
        // loss = sum(y^2)/2
        let gx = bn.backward(&cache, &y, None);
        let loss = |x: &Array4<f32>| -> f64 {
            let y = reference::batchnorm_train(
                &x.mapv(f64::from),
                &bn.gamma.mapv(f64::from),
                &bn.beta.mapv(f64::from),
                bn.eps as f64,
            );
            y.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let h = 1e-3f32;
        for &idx in &[[0usize, 0, 0, 0], [3, 1, 2, 2], [1, 0, 1, 2]] {
            let mut hi = x.clone();
            hi[idx] += h;
            let mut lo = x.clone();
            lo[idx] -= h;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * h as f64);
            let an = gx[idx] as f64;
            assert!((fd - an).abs() / (an.abs() + 1e-2) < 2e-2, "fd {fd} analytic {an}");
        }
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut x = Array4::zeros((1, 1, 4, 4));
        x[[0, 0, 1, 1]] = 5.0;
        x[[0, 0, 2, 3]] = 7.0;
        let (y, cache) = MaxPool2d::forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 7.0);
        let gy = Array4::ones(y.dim());
        let gx = MaxPool2d::backward(&cache, &gy);
        assert_eq!(gx[[0, 0, 1, 1]], 1.0);
        assert_eq!(gx[[0, 0, 2, 3]], 1.0);
        assert_eq!(gx.sum(), 4.0);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let x = Array4::from_elem((1, 1, 20, 20), 1.0f32);
        let mut rng = rng_stream(5, 5);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng);
        for (&yv, &mv) in y.iter().zip(mask.iter()) {
            assert!(yv == 0.0 || (yv - 2.0).abs() < 1e-6);
            assert_eq!(yv, mv);
        }
        let kept = y.iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 120 && kept < 280, "kept {kept} out of 400");
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let x = rand4((2, 1, 3, 3), 9);
        let mut rng = rng_stream(6, 6);
        let (y, mask) = dropout_forward(&x, 0.0, &mut rng);
        assert_eq!(y, x);
        assert!(mask.iter().all(|&v| v == 1.0));
    }
}
