//! Residual-augmented PatchGAN discriminator.
//!
//! Scores (condition, candidate) image pairs as a 2-D grid of per-patch
//! realism probabilities rather than a single scalar. Each stride-2
//! convolution layer is followed by the configured number of residual
//! blocks.

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use super::generator::ResidualBlock;
use crate::error::{AdvError, Result};
use crate::nn::{
    leaky_relu_backward, leaky_relu_forward, rng_stream, scoped, scoped_mut, sigmoid_backward,
    sigmoid_forward, BatchNorm2d, BnCache, Conv2d, ParamCollect, WeightInit,
};

const LEAKY_SLOPE: f32 = 0.2;

/// Discriminator architecture parameters. `conv_layers` counts the stride-2
/// downsampling convolutions before the 1-channel scoring head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Channels of each input image (condition and candidate have the same
    /// shape and are concatenated).
    pub input_shape: (usize, usize, usize),
    pub conv_layers: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
}

impl DiscriminatorConfig {
    pub fn desk(input_shape: (usize, usize, usize)) -> Self {
        Self { input_shape, conv_layers: 2, base_channels: 16, residual_blocks: 7 }
    }

    pub fn with_residual_blocks(mut self, n: usize) -> Self {
        self.residual_blocks = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (_, h, w) = self.input_shape;
        if self.conv_layers == 0 {
            return Err(AdvError::Config("discriminator needs at least one conv layer".into()));
        }
        let div = 1usize << self.conv_layers;
        if h % div != 0 || w % div != 0 {
            return Err(AdvError::Config(format!(
                "input {h}x{w} is not divisible by 2^{}",
                self.conv_layers
            )));
        }
        if h / div < 2 || w / div < 2 {
            return Err(AdvError::Config(
                "too many conv layers for this input size (patch grid would vanish)".into(),
            ));
        }
        Ok(())
    }

    fn channels(&self, layer: usize) -> usize {
        self.base_channels * (1 << layer.min(3))
    }

    /// Spatial shape of the per-patch score grid.
    pub fn patch_output_shape(&self) -> (usize, usize) {
        let (_, h, w) = self.input_shape;
        let div = 1usize << self.conv_layers;
        // final 4x4 stride-1 pad-1 conv shrinks each side by one
        (h / div - 1, w / div - 1)
    }
}

#[derive(Clone)]
struct DiscBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    res: Vec<ResidualBlock>,
}

/// PatchGAN discriminator over concatenated (condition, candidate) pairs.
#[derive(Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    blocks: Vec<DiscBlock>,
    final_conv: Conv2d,
}

struct DiscBlockCache {
    conv_in: Array4<f32>,
    bn: Option<BnCache>,
    pre_act: Array4<f32>,
    res: Vec<super::generator::ResBlockCache>,
    out: Array4<f32>,
}

pub struct DiscriminatorCache {
    blocks: Vec<DiscBlockCache>,
    scores: Array4<f32>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_stream(seed, 0xD15C);
        let (c_img, _, _) = cfg.input_shape;
        let mut blocks = Vec::with_capacity(cfg.conv_layers);
        for i in 0..cfg.conv_layers {
            let c_in = if i == 0 { 2 * c_img } else { cfg.channels(i - 1) };
            let c_out = cfg.channels(i);
            blocks.push(DiscBlock {
                conv: Conv2d::new(c_in, c_out, 4, 2, 1, WeightInit::Normal(0.02), &mut rng),
                bn: (i > 0).then(|| BatchNorm2d::new(c_out)),
                res: (0..cfg.residual_blocks)
                    .map(|_| ResidualBlock::new(c_out, &mut rng))
                    .collect(),
            });
        }
        let final_conv = Conv2d::new(
            cfg.channels(cfg.conv_layers - 1),
            1,
            4,
            1,
            1,
            WeightInit::Normal(0.02),
            &mut rng,
        );
        Ok(Self { cfg, blocks, final_conv })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| DiscBlock {
                    conv: b.conv.zeros_like(),
                    bn: b.bn.as_ref().map(BatchNorm2d::zeros_like),
                    res: b.res.iter().map(ResidualBlock::zeros_like).collect(),
                })
                .collect(),
            final_conv: self.final_conv.zeros_like(),
        }
    }

    pub fn describe(&self) -> String {
        let mut out = format!(
            "discriminator layers={} base={} residual_blocks={} patch_grid={:?}\n",
            self.cfg.conv_layers,
            self.cfg.base_channels,
            self.cfg.residual_blocks,
            self.cfg.patch_output_shape()
        );
        for (i, b) in self.blocks.iter().enumerate() {
            let (co, ci, _, _) = b.conv.w.dim();
            out.push_str(&format!(
                "d{i}: conv4x4 s2 {ci}->{co}{}{}\n",
                if b.bn.is_some() { " bn" } else { "" },
                if b.res.is_empty() {
                    String::new()
                } else {
                    format!(" + res x{} @{co}", b.res.len())
                }
            ));
        }
        out.push_str("head: conv4x4 s1 ->1 sigmoid\n");
        out
    }

    pub fn forward_train(
        &self,
        condition: &Array4<f32>,
        candidate: &Array4<f32>,
    ) -> (Array4<f32>, DiscriminatorCache) {
        self.forward_inner(condition, candidate, true)
    }

    pub fn forward_eval(&self, condition: &Array4<f32>, candidate: &Array4<f32>) -> Array4<f32> {
        self.forward_inner(condition, candidate, false).0
    }

    fn forward_inner(
        &self,
        condition: &Array4<f32>,
        candidate: &Array4<f32>,
        train: bool,
    ) -> (Array4<f32>, DiscriminatorCache) {
        assert_eq!(condition.dim(), candidate.dim(), "condition/candidate shape mismatch");
        let mut cur =
            ndarray::concatenate(Axis(1), &[condition.view(), candidate.view()]).unwrap();
        let mut cache = DiscriminatorCache { blocks: Vec::new(), scores: Array4::zeros((0, 0, 0, 0)) };
        for b in &self.blocks {
            let conv_in = cur;
            let mut h = b.conv.forward(&conv_in);
            let bn_cache = match (&b.bn, train) {
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
            let mut res_caches = Vec::with_capacity(b.res.len());
            for r in &b.res {
                if train {
                    let (out, rc) = r.forward_train(&h);
                    h = out;
                    res_caches.push(rc);
                } else {
                    h = r.forward_eval(&h);
                }
            }
            cache.blocks.push(DiscBlockCache {
                conv_in,
                bn: bn_cache,
                pre_act,
                res: res_caches,
                out: h.clone(),
            });
            cur = h;
        }
        let logits = self.final_conv.forward(&cur);
        let scores = sigmoid_forward(&logits);
        cache.scores = scores.clone();
        (scores, cache)
    }

    /// Backward from a score gradient. Returns the gradient with respect to
    /// the *candidate* image (the generator's output); condition gradients
    /// are discarded.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        g_scores: &Array4<f32>,
        mut grads: Option<&mut Discriminator>,
    ) -> Array4<f32> {
        let mut g = sigmoid_backward(&cache.scores, g_scores);
        g = self.final_conv.backward(
            &cache.blocks.last().unwrap().out,
            &g,
            grads.as_deref_mut().map(|gr| &mut gr.final_conv),
        );
        for (i, (b, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            for (k, (r, rc)) in b.res.iter().zip(&bc.res).enumerate().rev() {
                let r_grads = grads.as_deref_mut().map(|gr| &mut gr.blocks[i].res[k]);
                g = r.backward(rc, &g, r_grads);
            }
            g = leaky_relu_backward(&bc.pre_act, &g, LEAKY_SLOPE);
            if let Some(bn) = &b.bn {
                let bn_grads = grads.as_deref_mut().and_then(|gr| gr.blocks[i].bn.as_mut());
                g = bn.backward(bc.bn.as_ref().unwrap(), &g, bn_grads);
            }
            let conv_grads = grads.as_deref_mut().map(|gr| &mut gr.blocks[i].conv);
            g = b.conv.backward(&bc.conv_in, &g, conv_grads);
        }
        let c_img = self.cfg.input_shape.0;
        g.slice(ndarray::s![.., c_img.., .., ..]).to_owned()
    }

    pub fn update_running(&mut self, cache: &DiscriminatorCache) {
        for (b, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let (Some(bn), Some(c)) = (&mut b.bn, &bc.bn) {
                let (n, _, h, w) = bc.pre_act.dim();
                bn.update_running(c, n * h * w);
            }
            for (r, rc) in b.res.iter_mut().zip(&bc.res) {
                r.update_running(rc);
            }
        }
    }

    /// Exact `f64` training-mode forward for objective self-checks.
    pub fn forward_train_f64(&self, condition: &Array4<f64>, candidate: &Array4<f64>) -> Array4<f64> {
        use crate::nn::reference;
        let mut cur =
            ndarray::concatenate(Axis(1), &[condition.view(), candidate.view()]).unwrap();
        for b in &self.blocks {
            let mut h =
                reference::conv2d(&cur, &b.conv.w.mapv(f64::from), &b.conv.b.mapv(f64::from), 2, 1);
            if let Some(bn) = &b.bn {
                h = reference::batchnorm_train(
                    &h,
                    &bn.gamma.mapv(f64::from),
                    &bn.beta.mapv(f64::from),
                    bn.eps as f64,
                );
            }
            h = reference::leaky_relu(&h, LEAKY_SLOPE as f64);
            for r in &b.res {
                h = r.forward_f64(&h);
            }
            cur = h;
        }
        let logits = reference::conv2d(
            &cur,
            &self.final_conv.w.mapv(f64::from),
            &self.final_conv.b.mapv(f64::from),
            1,
            1,
        );
        reference::sigmoid(&logits)
    }
}

impl ParamCollect for Discriminator {
    fn learnables(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.conv.learnables());
            if let Some(bn) = &b.bn {
                out.extend(bn.learnables());
            }
            for r in &b.res {
                out.extend(r.learnables());
            }
        }
        out.extend(self.final_conv.learnables());
        out
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.conv.learnables_mut());
            if let Some(bn) = &mut b.bn {
                out.extend(bn.learnables_mut());
            }
            for r in &mut b.res {
                out.extend(r.learnables_mut());
            }
        }
        out.extend(self.final_conv.learnables_mut());
        out
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(scoped(&format!("d{i}.conv"), b.conv.state_tensors()));
            if let Some(bn) = &b.bn {
                out.extend(scoped(&format!("d{i}.bn"), bn.state_tensors()));
            }
            for (k, r) in b.res.iter().enumerate() {
                out.extend(scoped(&format!("d{i}.res{k}"), r.state_tensors()));
            }
        }
        out.extend(scoped("head", self.final_conv.state_tensors()));
        out
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(scoped_mut(&format!("d{i}.conv"), b.conv.state_tensors_mut()));
            if let Some(bn) = &mut b.bn {
                out.extend(scoped_mut(&format!("d{i}.bn"), bn.state_tensors_mut()));
            }
            for (k, r) in b.res.iter_mut().enumerate() {
                out.extend(scoped_mut(&format!("d{i}.res{k}"), r.state_tensors_mut()));
            }
        }
        out.extend(scoped_mut("head", self.final_conv.state_tensors_mut()));
        out
    }
}
