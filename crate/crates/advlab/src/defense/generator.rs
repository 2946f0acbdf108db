//! Residual-augmented U-Net generator.
//!
//! Encoder blocks are 4x4 stride-2 convolutions (batch norm on all but the
//! first, LeakyReLU 0.2), each followed by a configurable number of
//! residual blocks at that level. Decoder blocks are 4x4 stride-2
//! transposed convolutions with batch norm, dropout on the inner blocks,
//! and ReLU; skip connections concatenate encoder level `i` into decoder
//! level `depth - i`. The final layer maps to image channels through a
//! sigmoid so outputs always lie in `[0,1]`.

use ndarray::{Array4, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdvError, Result};
use crate::nn::{
    dropout_forward, leaky_relu_backward, leaky_relu_forward, reference, relu_backward,
    relu_forward, rng_stream, scoped, scoped_mut, sigmoid_backward, sigmoid_forward, BatchNorm2d,
    BnCache, Conv2d, ConvTranspose2d, ParamCollect, WeightInit,
};

const LEAKY_SLOPE: f32 = 0.2;

/// Generator architecture parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_shape: (usize, usize, usize),
    /// Encoder depth; each block halves the spatial dims.
    pub encoder_blocks: usize,
    /// Inner decoder blocks; the final output layer is additional and
    /// implied, so this must equal `encoder_blocks - 1`.
    pub decoder_blocks: usize,
    /// Residual blocks appended to every encoder level.
    pub residual_blocks: usize,
    pub base_channels: usize,
    pub dropout_rate: f32,
}

impl GeneratorConfig {
    /// Desk-scale defaults: depth fitted to the divisibility of the input
    /// (2 for 28x28, 3 for 32x32), 16 base channels, 7 residual blocks.
    pub fn desk(input_shape: (usize, usize, usize)) -> Self {
        let (_, h, w) = input_shape;
        let mut depth = 0;
        let mut s = h.min(w);
        while depth < 4 && s % 2 == 0 && s / 2 >= 4 {
            s /= 2;
            depth += 1;
        }
        let depth = depth.clamp(1, 3);
        Self {
            input_shape,
            encoder_blocks: depth,
            decoder_blocks: depth - 1,
            residual_blocks: 7,
            base_channels: 16,
            dropout_rate: 0.5,
        }
    }

    /// The full-size configuration for 256x256 inputs: 8 encoder blocks,
    /// 7 decoder blocks plus the output layer, 7 residual blocks, 64 base
    /// channels. Untested at full scale in this repository.
    pub fn full_256(channels: usize) -> Self {
        Self {
            input_shape: (channels, 256, 256),
            encoder_blocks: 8,
            decoder_blocks: 7,
            residual_blocks: 7,
            base_channels: 64,
            dropout_rate: 0.5,
        }
    }

    pub fn with_residual_blocks(mut self, n: usize) -> Self {
        self.residual_blocks = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (_, h, w) = self.input_shape;
        if self.encoder_blocks == 0 {
            return Err(AdvError::Config("generator needs at least one encoder block".into()));
        }
        if self.decoder_blocks + 1 != self.encoder_blocks {
            return Err(AdvError::Config(format!(
                "decoder_blocks ({}) must be encoder_blocks - 1 ({})",
                self.decoder_blocks,
                self.encoder_blocks - 1
            )));
        }
        let div = 1usize << self.encoder_blocks;
        if h % div != 0 || w % div != 0 {
            return Err(AdvError::Config(format!(
                "input {h}x{w} is not divisible by 2^{} = {div}",
                self.encoder_blocks
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AdvError::Config("dropout_rate must be in [0,1)".into()));
        }
        if self.base_channels == 0 {
            return Err(AdvError::Config("base_channels must be >= 1".into()));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels * (1 << level.min(3))
    }
}

/// One residual block: two 3x3 convolutions with batch norm, ReLU between,
/// and the identity skip (`y = F(x) + x`).
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

pub struct ResBlockCache {
    x: Array4<f32>,
    bn1: BnCache,
    bn1_out: Array4<f32>,
    relu_out: Array4<f32>,
    bn2: BnCache,
}

impl ResidualBlock {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(channels, channels, 3, 1, 1, WeightInit::Normal(0.02), rng),
            bn1: BatchNorm2d::new(channels),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, WeightInit::Normal(0.02), rng),
            bn2: BatchNorm2d::new(channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            bn1: self.bn1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            bn2: self.bn2.zeros_like(),
        }
    }

    /// Zeroes the residual function's weights, making the block an exact
    /// identity map.
    pub fn zero_internal(&mut self) {
        self.conv1.w.fill(0.0);
        self.conv1.b.fill(0.0);
        self.conv2.w.fill(0.0);
        self.conv2.b.fill(0.0);
        self.bn1.beta.fill(0.0);
        self.bn2.beta.fill(0.0);
    }

    pub fn forward_train(&self, x: &Array4<f32>) -> (Array4<f32>, ResBlockCache) {
        let h = self.conv1.forward(x);
        let (h, bn1c) = self.bn1.forward_train(&h);
        let bn1_out = h.clone();
        let r = relu_forward(&h);
        let h2 = self.conv2.forward(&r);
        let (h2, bn2c) = self.bn2.forward_train(&h2);
        let y = &h2 + x;
        (y, ResBlockCache { x: x.clone(), bn1: bn1c, bn1_out, relu_out: r, bn2: bn2c })
    }

    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let h = self.conv1.forward(x);
        let h = self.bn1.forward_eval(&h);
        let r = relu_forward(&h);
        let h2 = self.conv2.forward(&r);
        let h2 = self.bn2.forward_eval(&h2);
        &h2 + x
    }

    pub fn backward(
        &self,
        cache: &ResBlockCache,
        gy: &Array4<f32>,
        grads: Option<&mut ResidualBlock>,
    ) -> Array4<f32> {
        let (g_bn1, g_bn2, g_conv1, g_conv2) = match grads {
            Some(g) => {
                (Some(&mut g.bn1), Some(&mut g.bn2), Some(&mut g.conv1), Some(&mut g.conv2))
            }
            None => (None, None, None, None),
        };
        let g = self.bn2.backward(&cache.bn2, gy, g_bn2);
        let g = self.conv2.backward(&cache.relu_out, &g, g_conv2);
        let g = relu_backward(&cache.bn1_out, &g);
        let g = self.bn1.backward(&cache.bn1, &g, g_bn1);
        let g = self.conv1.backward(&cache.x, &g, g_conv1);
        g + gy
    }

    pub fn update_running(&mut self, cache: &ResBlockCache) {
        let (n, _, h, w) = cache.x.dim();
        self.bn1.update_running(&cache.bn1, n * h * w);
        self.bn2.update_running(&cache.bn2, n * h * w);
    }

    pub fn forward_f64(&self, x: &Array4<f64>) -> Array4<f64> {
        let h = reference::conv2d(x, &self.conv1.w.mapv(f64::from), &self.conv1.b.mapv(f64::from), 1, 1);
        let h = reference::batchnorm_train(
            &h,
            &self.bn1.gamma.mapv(f64::from),
            &self.bn1.beta.mapv(f64::from),
            self.bn1.eps as f64,
        );
        let r = reference::relu4(&h);
        let h2 =
            reference::conv2d(&r, &self.conv2.w.mapv(f64::from), &self.conv2.b.mapv(f64::from), 1, 1);
        let h2 = reference::batchnorm_train(
            &h2,
            &self.bn2.gamma.mapv(f64::from),
            &self.bn2.beta.mapv(f64::from),
            self.bn2.eps as f64,
        );
        &h2 + x
    }
}

impl ParamCollect for ResidualBlock {
    fn learnables(&self) -> Vec<&[f32]> {
        let mut out = self.conv1.learnables();
        out.extend(self.bn1.learnables());
        out.extend(self.conv2.learnables());
        out.extend(self.bn2.learnables());
        out
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = self.conv1.learnables_mut();
        out.extend(self.bn1.learnables_mut());
        out.extend(self.conv2.learnables_mut());
        out.extend(self.bn2.learnables_mut());
        out
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        let mut out = scoped("conv1", self.conv1.state_tensors());
        out.extend(scoped("bn1", self.bn1.state_tensors()));
        out.extend(scoped("conv2", self.conv2.state_tensors()));
        out.extend(scoped("bn2", self.bn2.state_tensors()));
        out
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out = scoped_mut("conv1", self.conv1.state_tensors_mut());
        out.extend(scoped_mut("bn1", self.bn1.state_tensors_mut()));
        out.extend(scoped_mut("conv2", self.conv2.state_tensors_mut()));
        out.extend(scoped_mut("bn2", self.bn2.state_tensors_mut()));
        out
    }
}

#[derive(Clone)]
struct EncBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    res: Vec<ResidualBlock>,
}

#[derive(Clone)]
struct DecBlock {
    convt: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    dropout: bool,
}

/// The purification generator: an image-to-image endomorphism.
#[derive(Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    enc: Vec<EncBlock>,
    dec: Vec<DecBlock>,
}

struct EncCache {
    conv_in: Array4<f32>,
    bn: Option<BnCache>,
    pre_act: Array4<f32>,
    res: Vec<ResBlockCache>,
    out: Array4<f32>,
}

struct DecCache {
    input: Array4<f32>,
    bn: Option<BnCache>,
    dropout_mask: Option<Array4<f32>>,
    pre_act: Option<Array4<f32>>,
    sigmoid_out: Option<Array4<f32>>,
}

pub struct GeneratorCache {
    enc: Vec<EncCache>,
    dec: Vec<DecCache>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_stream(seed, 0x6E0);
        let depth = cfg.encoder_blocks;
        let (c_img, _, _) = cfg.input_shape;
        let mut enc = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_in = if i == 0 { c_img } else { cfg.channels(i - 1) };
            let c_out = cfg.channels(i);
            let conv = Conv2d::new(c_in, c_out, 4, 2, 1, WeightInit::Normal(0.02), &mut rng);
            let bn = (i > 0).then(|| BatchNorm2d::new(c_out));
            let res =
                (0..cfg.residual_blocks).map(|_| ResidualBlock::new(c_out, &mut rng)).collect();
            enc.push(EncBlock { conv, bn, res });
        }
        let mut dec = Vec::with_capacity(depth);
        let dropout_blocks = 3.min(depth.saturating_sub(1));
        for j in 0..depth {
            let last = j + 1 == depth;
            let c_in = if j == 0 {
                cfg.channels(depth - 1)
            } else {
                2 * cfg.channels(depth - 1 - j)
            };
            let c_out = if last { c_img } else { cfg.channels(depth - 2 - j) };
            let convt =
                ConvTranspose2d::new(c_in, c_out, 4, 2, 1, WeightInit::Normal(0.02), &mut rng);
            let bn = (!last).then(|| BatchNorm2d::new(c_out));
            dec.push(DecBlock { convt, bn, dropout: !last && j < dropout_blocks });
        }
        Ok(Self { cfg, enc, dec })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            enc: self
                .enc
                .iter()
                .map(|e| EncBlock {
                    conv: e.conv.zeros_like(),
                    bn: e.bn.as_ref().map(BatchNorm2d::zeros_like),
                    res: e.res.iter().map(ResidualBlock::zeros_like).collect(),
                })
                .collect(),
            dec: self
                .dec
                .iter()
                .map(|d| DecBlock {
                    convt: d.convt.zeros_like(),
                    bn: d.bn.as_ref().map(BatchNorm2d::zeros_like),
                    dropout: d.dropout,
                })
                .collect(),
        }
    }

    /// Direct access to residual blocks (tests zero them to check the
    /// identity property).
    pub fn residual_blocks_mut(&mut self) -> Vec<&mut ResidualBlock> {
        self.enc.iter_mut().flat_map(|e| e.res.iter_mut()).collect()
    }

    /// One line per layer, used for architecture assertions.
    pub fn describe(&self) -> String {
        let (c, h, w) = self.cfg.input_shape;
        let mut out = format!(
            "generator input={c}x{h}x{w} depth={} base={} residual_blocks={}\n",
            self.cfg.encoder_blocks, self.cfg.base_channels, self.cfg.residual_blocks
        );
        for (i, e) in self.enc.iter().enumerate() {
            let (co, ci, _, _) = e.conv.w.dim();
            out.push_str(&format!(
                "enc{i}: conv4x4 s2 {ci}->{co}{}{}\n",
                if e.bn.is_some() { " bn" } else { "" },
                if e.res.is_empty() {
                    String::new()
                } else {
                    format!(" + res x{} @{co}", e.res.len())
                }
            ));
        }
        for (j, d) in self.dec.iter().enumerate() {
            let (ci, co, _, _) = d.convt.w.dim();
            let last = j + 1 == self.dec.len();
            out.push_str(&format!(
                "dec{j}: convt4x4 s2 {ci}->{co}{}{}{}\n",
                if d.bn.is_some() { " bn" } else { "" },
                if d.dropout { " dropout" } else { "" },
                if last { " sigmoid" } else { " relu" }
            ));
        }
        out
    }

    pub fn forward_train(&self, x: &Array4<f32>, rng: &mut ChaCha8Rng) -> (Array4<f32>, GeneratorCache) {
        self.forward_inner(x, true, Some(rng))
    }

    /// Inference: running statistics, dropout disabled.
    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward_inner(x, false, None).0
    }

    fn forward_inner(
        &self,
        x: &Array4<f32>,
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array4<f32>, GeneratorCache) {
        let depth = self.enc.len();
        let mut cache = GeneratorCache { enc: Vec::with_capacity(depth), dec: Vec::new() };
        let mut cur = x.clone();
        for e in &self.enc {
            let conv_in = cur;
            let mut h = e.conv.forward(&conv_in);
            let bn_cache = match (&e.bn, train) {
                (Some(bn), true) => {
                    let (out, c) = bn.forward_train(&h);
                    h = out;
                    Some(c)
                }
                (Some(bn), false) => {
                    h = bn.forward_eval(&h);
                    None
                }
                (None, _) => None,
            };
            let pre_act = h.clone();
            h = leaky_relu_forward(&h, LEAKY_SLOPE);
            let mut res_caches = Vec::with_capacity(e.res.len());
            for r in &e.res {
                if train {
                    let (out, rc) = r.forward_train(&h);
                    h = out;
                    res_caches.push(rc);
                } else {
                    h = r.forward_eval(&h);
                }
            }
            cache.enc.push(EncCache {
                conv_in,
                bn: bn_cache,
                pre_act,
                res: res_caches,
                out: h.clone(),
            });
            cur = h;
        }

        let mut prev = cache.enc[depth - 1].out.clone();
        let mut output = None;
        for (j, d) in self.dec.iter().enumerate() {
            let last = j + 1 == depth;
            let input = if j == 0 {
                prev.clone()
            } else {
                concat_channels(&prev, &cache.enc[depth - 1 - j].out)
            };
            let mut h = d.convt.forward(&input);
            let mut dc = DecCache {
                input,
                bn: None,
                dropout_mask: None,
                pre_act: None,
                sigmoid_out: None,
            };
            if last {
                let y = sigmoid_forward(&h);
                dc.sigmoid_out = Some(y.clone());
                output = Some(y);
            } else {
                match (&d.bn, train) {
                    (Some(bn), true) => {
                        let (out, c) = bn.forward_train(&h);
                        h = out;
                        dc.bn = Some(c);
                    }
                    (Some(bn), false) => h = bn.forward_eval(&h),
                    (None, _) => {}
                }
                if d.dropout && train && self.cfg.dropout_rate > 0.0 {
                    let rng = rng.as_deref_mut().expect("training forward needs an rng");
                    let (out, mask) = dropout_forward(&h, self.cfg.dropout_rate, rng);
                    h = out;
                    dc.dropout_mask = Some(mask);
                }
                dc.pre_act = Some(h.clone());
                h = relu_forward(&h);
                prev = h;
            }
            cache.dec.push(dc);
        }
        (output.expect("decoder produced an output"), cache)
    }

    /// Backward from an output gradient; accumulates into `grads` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        cache: &GeneratorCache,
        gy: &Array4<f32>,
        grads: &mut Generator,
    ) -> Array4<f32> {
        let depth = self.enc.len();
        let mut enc_gacc: Vec<Option<Array4<f32>>> = (0..depth).map(|_| None).collect();
        let mut g_prev: Option<Array4<f32>> = None;

        for j in (0..depth).rev() {
            let d = &self.dec[j];
            let dc = &cache.dec[j];
            let last = j + 1 == depth;
            let g = if last {
                sigmoid_backward(dc.sigmoid_out.as_ref().unwrap(), gy)
            } else {
                let g_out = g_prev.take().unwrap();
                let mut g = relu_backward(dc.pre_act.as_ref().unwrap(), &g_out);
                if let Some(mask) = &dc.dropout_mask {
                    g = &g * mask;
                }
                if let Some(bn) = &d.bn {
                    g = bn.backward(dc.bn.as_ref().unwrap(), &g, grads.dec[j].bn.as_mut());
                }
                g
            };
            let g_in = d.convt.backward(&dc.input, &g, Some(&mut grads.dec[j].convt));
            if j == 0 {
                accumulate(&mut enc_gacc[depth - 1], &g_in);
            } else {
                let skip_ch = cache.enc[depth - 1 - j].out.dim().1;
                let prev_ch = g_in.dim().1 - skip_ch;
                let (g_p, g_skip) = split_channels(&g_in, prev_ch);
                accumulate(&mut enc_gacc[depth - 1 - j], &g_skip);
                g_prev = Some(g_p);
            }
        }

        let mut g_next: Option<Array4<f32>> = None;
        for i in (0..depth).rev() {
            let e = &self.enc[i];
            let ec = &cache.enc[i];
            let mut g = match (enc_gacc[i].take(), g_next.take()) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("every encoder level feeds the decoder"),
            };
            for (k, (r, rc)) in e.res.iter().zip(&ec.res).enumerate().rev() {
                g = r.backward(rc, &g, Some(&mut grads.enc[i].res[k]));
            }
            g = leaky_relu_backward(&ec.pre_act, &g, LEAKY_SLOPE);
            if let Some(bn) = &e.bn {
                g = bn.backward(ec.bn.as_ref().unwrap(), &g, grads.enc[i].bn.as_mut());
            }
            g = e.conv.backward(&ec.conv_in, &g, Some(&mut grads.enc[i].conv));
            g_next = Some(g);
        }
        g_next.unwrap()
    }

    /// Folds every batch-norm cache into the running statistics.
    pub fn update_running(&mut self, cache: &GeneratorCache) {
        for (e, ec) in self.enc.iter_mut().zip(&cache.enc) {
            if let (Some(bn), Some(c)) = (&mut e.bn, &ec.bn) {
                let (n, _, h, w) = ec.pre_act.dim();
                bn.update_running(c, n * h * w);
            }
            for (r, rc) in e.res.iter_mut().zip(&ec.res) {
                r.update_running(rc);
            }
        }
        for (d, dc) in self.dec.iter_mut().zip(&cache.dec) {
            if let (Some(bn), Some(c)) = (&mut d.bn, &dc.bn) {
                if let Some(pre) = &dc.pre_act {
                    let (n, _, h, w) = pre.dim();
                    bn.update_running(c, n * h * w);
                }
            }
        }
    }

    /// Exact `f64` training-mode forward (batch statistics, no dropout),
    /// for finite-difference checks of the training objective.
    pub fn forward_train_f64(&self, x: &Array4<f64>) -> Array4<f64> {
        let depth = self.enc.len();
        let mut feats: Vec<Array4<f64>> = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for e in &self.enc {
            let mut h = reference::conv2d(
                &cur,
                &e.conv.w.mapv(f64::from),
                &e.conv.b.mapv(f64::from),
                2,
                1,
            );
            if let Some(bn) = &e.bn {
                h = reference::batchnorm_train(
                    &h,
                    &bn.gamma.mapv(f64::from),
                    &bn.beta.mapv(f64::from),
                    bn.eps as f64,
                );
            }
            h = reference::leaky_relu(&h, LEAKY_SLOPE as f64);
            for r in &e.res {
                h = r.forward_f64(&h);
            }
            feats.push(h.clone());
            cur = h;
        }
        let mut prev = feats[depth - 1].clone();
        for (j, d) in self.dec.iter().enumerate() {
            let last = j + 1 == depth;
            let input = if j == 0 {
                prev.clone()
            } else {
                concat_channels_f64(&prev, &feats[depth - 1 - j])
            };
            let mut h = reference::conv_transpose2d(
                &input,
                &d.convt.w.mapv(f64::from),
                &d.convt.b.mapv(f64::from),
                2,
                1,
            );
            if last {
                return reference::sigmoid(&h);
            }
            if let Some(bn) = &d.bn {
                h = reference::batchnorm_train(
                    &h,
                    &bn.gamma.mapv(f64::from),
                    &bn.beta.mapv(f64::from),
                    bn.eps as f64,
                );
            }
            prev = reference::relu4(&h);
        }
        unreachable!("decoder always ends in the sigmoid output layer")
    }
}

fn concat_channels(a: &Array4<f32>, b: &Array4<f32>) -> Array4<f32> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("channel concat")
}

fn concat_channels_f64(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("channel concat")
}

fn split_channels(g: &Array4<f32>, first: usize) -> (Array4<f32>, Array4<f32>) {
    (
        g.slice(ndarray::s![.., ..first, .., ..]).to_owned(),
        g.slice(ndarray::s![.., first.., .., ..]).to_owned(),
    )
}

fn accumulate(slot: &mut Option<Array4<f32>>, g: &Array4<f32>) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g.clone()),
    }
}

impl ParamCollect for Generator {
    fn learnables(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for e in &self.enc {
            out.extend(e.conv.learnables());
            if let Some(bn) = &e.bn {
                out.extend(bn.learnables());
            }
            for r in &e.res {
                out.extend(r.learnables());
            }
        }
        for d in &self.dec {
            out.extend(d.convt.learnables());
            if let Some(bn) = &d.bn {
                out.extend(bn.learnables());
            }
        }
        out
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for e in &mut self.enc {
            out.extend(e.conv.learnables_mut());
            if let Some(bn) = &mut e.bn {
                out.extend(bn.learnables_mut());
            }
            for r in &mut e.res {
                out.extend(r.learnables_mut());
            }
        }
        for d in &mut self.dec {
            out.extend(d.convt.learnables_mut());
            if let Some(bn) = &mut d.bn {
                out.extend(bn.learnables_mut());
            }
        }
        out
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for (i, e) in self.enc.iter().enumerate() {
            out.extend(scoped(&format!("enc{i}.conv"), e.conv.state_tensors()));
            if let Some(bn) = &e.bn {
                out.extend(scoped(&format!("enc{i}.bn"), bn.state_tensors()));
            }
            for (k, r) in e.res.iter().enumerate() {
                out.extend(scoped(&format!("enc{i}.res{k}"), r.state_tensors()));
            }
        }
        for (j, d) in self.dec.iter().enumerate() {
            out.extend(scoped(&format!("dec{j}.convt"), d.convt.state_tensors()));
            if let Some(bn) = &d.bn {
                out.extend(scoped(&format!("dec{j}.bn"), bn.state_tensors()));
            }
        }
        out
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out = Vec::new();
        for (i, e) in self.enc.iter_mut().enumerate() {
            out.extend(scoped_mut(&format!("enc{i}.conv"), e.conv.state_tensors_mut()));
            if let Some(bn) = &mut e.bn {
                out.extend(scoped_mut(&format!("enc{i}.bn"), bn.state_tensors_mut()));
            }
            for (k, r) in e.res.iter_mut().enumerate() {
                out.extend(scoped_mut(&format!("enc{i}.res{k}"), r.state_tensors_mut()));
            }
        }
        for (j, d) in self.dec.iter_mut().enumerate() {
            out.extend(scoped_mut(&format!("dec{j}.convt"), d.convt.state_tensors_mut()));
            if let Some(bn) = &mut d.bn {
                out.extend(scoped_mut(&format!("dec{j}.bn"), bn.state_tensors_mut()));
            }
        }
        out
    }
}
