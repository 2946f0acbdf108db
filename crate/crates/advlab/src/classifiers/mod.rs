//! Reference convolutional classifiers used as attack targets and as the
//! frozen feature extractor for the perceptual loss.
//!
//! Two desk-scale architectures stand in for the large pre-trained targets:
//! `ConvNet-A` (two conv blocks and two dense layers) and `ConvNet-B`
//! (three conv blocks of different widths and a single dense head). Both
//! work on 28x28 and 32x32 inputs with 1 or 3 channels.

use ndarray::{Array1, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::container::{self, fingerprint, load_state_into};
use crate::core::{predictions, Classifier, ImageBatch, LabelBatch};
use crate::error::{AdvError, Result};
use crate::nn::{
    reference, relu_backward, relu_forward, rng_stream, Adam, Conv2d, Linear, MaxPool2d,
    ParamCollect, PoolCache, WeightInit,
};
use crate::nn::{scoped, scoped_mut};

/// Reference architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    ConvNetA,
    ConvNetB,
}

impl Arch {
    pub fn id(&self) -> &'static str {
        match self {
            Arch::ConvNetA => "convnet-a",
            Arch::ConvNetB => "convnet-b",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "convnet-a" | "a" => Ok(Arch::ConvNetA),
            "convnet-b" | "b" => Ok(Arch::ConvNetB),
            other => Err(AdvError::Config(format!(
                "unknown architecture '{other}' (expected convnet-a or convnet-b)"
            ))),
        }
    }
}

/// Architecture plus input geometry; enough to rebuild the network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvNetConfig {
    pub arch: Arch,
    pub num_classes: usize,
    pub input_shape: (usize, usize, usize),
}

/// A small conv-relu-pool classifier with a dense head.
#[derive(Debug, Clone)]
pub struct ConvNet {
    cfg: ConvNetConfig,
    convs: Vec<Conv2d>,
    pools: Vec<bool>,
    fcs: Vec<Linear>,
}

/// Forward intermediates for the backward pass.
pub struct ConvNetCache {
    conv_in: Vec<Array4<f32>>,
    conv_pre: Vec<Array4<f32>>,
    stage_out: Vec<Array4<f32>>,
    pool_caches: Vec<Option<PoolCache>>,
    fc_in: Vec<Array2<f32>>,
    fc_pre: Vec<Array2<f32>>,
}

impl ConvNet {
    pub fn new(cfg: ConvNetConfig, seed: u64) -> Result<Self> {
        let (c, h, w) = cfg.input_shape;
        if h < 4 || w < 4 {
            return Err(AdvError::Config(format!("input {h}x{w} too small for two pools")));
        }
        let mut rng = rng_stream(seed, 0xC1A5);
        let (widths, pools): (Vec<usize>, Vec<bool>) = match cfg.arch {
            Arch::ConvNetA => (vec![16, 32], vec![true, true]),
            Arch::ConvNetB => (vec![24, 48, 64], vec![true, true, false]),
        };
        let mut convs = Vec::new();
        let mut ch = c;
        let (mut fh, mut fw) = (h, w);
        for (&width, &pool) in widths.iter().zip(&pools) {
            convs.push(Conv2d::new(ch, width, 3, 1, 1, WeightInit::ScaledUniform, &mut rng));
            ch = width;
            if pool {
                fh /= 2;
                fw /= 2;
            }
        }
        let flat = ch * fh * fw;
        let fcs = match cfg.arch {
            Arch::ConvNetA => vec![
                Linear::new(flat, 128, WeightInit::ScaledUniform, &mut rng),
                Linear::new(128, cfg.num_classes, WeightInit::ScaledUniform, &mut rng),
            ],
            Arch::ConvNetB => {
                vec![Linear::new(flat, cfg.num_classes, WeightInit::ScaledUniform, &mut rng)]
            }
        };
        Ok(Self { cfg, convs, pools, fcs })
    }

    pub fn config(&self) -> &ConvNetConfig {
        &self.cfg
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            pools: self.pools.clone(),
            fcs: self.fcs.iter().map(Linear::zeros_like).collect(),
        }
    }

    /// Names of the conv stages available as perceptual-loss taps. The dense
    /// head (the topmost layers) is deliberately not tappable.
    pub fn tap_names(&self) -> Vec<String> {
        (1..=self.convs.len()).map(|i| format!("conv{i}")).collect()
    }

    pub fn forward_cached(&self, x: &Array4<f32>) -> (Array2<f32>, ConvNetCache) {
        let n = x.dim().0;
        let mut cache = ConvNetCache {
            conv_in: Vec::new(),
            conv_pre: Vec::new(),
            stage_out: Vec::new(),
            pool_caches: Vec::new(),
            fc_in: Vec::new(),
            fc_pre: Vec::new(),
        };
        let mut cur = x.clone();
        for (conv, &pool) in self.convs.iter().zip(&self.pools) {
            cache.conv_in.push(cur.clone());
            let pre = conv.forward(&cur);
            let post = relu_forward(&pre);
            cache.conv_pre.push(pre);
            let staged = if pool {
                let (pooled, pc) = MaxPool2d::forward(&post);
                cache.pool_caches.push(Some(pc));
                pooled
            } else {
                cache.pool_caches.push(None);
                post
            };
            cache.stage_out.push(staged.clone());
            cur = staged;
        }
        let flat_len = cur.len() / n;
        let mut h2 = cur.into_shape_with_order((n, flat_len)).unwrap();
        for (i, fc) in self.fcs.iter().enumerate() {
            cache.fc_in.push(h2.clone());
            let pre = fc.forward(&h2);
            if i + 1 < self.fcs.len() {
                cache.fc_pre.push(pre.clone());
                h2 = pre.mapv(|v| v.max(0.0));
            } else {
                h2 = pre;
            }
        }
        (h2, cache)
    }

    /// Backward from a logit gradient. Accumulates weight gradients into
    /// `grads` when given; always returns the input gradient.
    pub fn backward(
        &self,
        cache: &ConvNetCache,
        dlogits: &Array2<f32>,
        mut grads: Option<&mut ConvNet>,
    ) -> Array4<f32> {
        let mut g2 = dlogits.clone();
        for i in (0..self.fcs.len()).rev() {
            if i + 1 < self.fcs.len() {
                let pre = &cache.fc_pre[i];
                ndarray::Zip::from(&mut g2).and(pre).for_each(|g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let fc_grads = grads.as_deref_mut().map(|g| &mut g.fcs[i]);
            g2 = self.fcs[i].backward(&cache.fc_in[i], &g2, fc_grads);
        }
        let last_stage = cache.stage_out.last().unwrap();
        let mut g4 = g2.into_shape_with_order(last_stage.dim()).unwrap();
        for i in (0..self.convs.len()).rev() {
            if let Some(pc) = &cache.pool_caches[i] {
                g4 = MaxPool2d::backward(pc, &g4);
            }
            g4 = relu_backward(&cache.conv_pre[i], &g4);
            let conv_grads = grads.as_deref_mut().map(|g| &mut g.convs[i]);
            g4 = self.convs[i].backward(&cache.conv_in[i], &g4, conv_grads);
        }
        g4
    }

    /// Conv-stage activations (the perceptual taps).
    pub fn stage_outputs(&self, x: &Array4<f32>) -> Vec<Array4<f32>> {
        let (_, cache) = self.forward_cached(x);
        cache.stage_out
    }

    /// VJP of the conv stages: one optional upstream gradient per stage;
    /// returns the input gradient.
    pub fn stages_vjp(
        &self,
        cache: &ConvNetCache,
        upstream: &[Option<Array4<f32>>],
    ) -> Array4<f32> {
        assert_eq!(upstream.len(), self.convs.len());
        let mut g4: Option<Array4<f32>> = None;
        for i in (0..self.convs.len()).rev() {
            let mut g = match (g4.take(), &upstream[i]) {
                (Some(g), Some(u)) => g + u,
                (Some(g), None) => g,
                (None, Some(u)) => u.clone(),
                (None, None) => continue,
            };
            if let Some(pc) = &cache.pool_caches[i] {
                g = MaxPool2d::backward(pc, &g);
            }
            g = relu_backward(&cache.conv_pre[i], &g);
            g4 = Some(self.convs[i].backward(&cache.conv_in[i], &g, None));
        }
        g4.expect("at least one upstream tap gradient required")
    }

    /// Conv-stage activations through the `f64` reference ops.
    pub fn stage_outputs_f64(&self, x: &Array4<f64>) -> Vec<Array4<f64>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for (conv, &pool) in self.convs.iter().zip(&self.pools) {
            let pre = reference::conv2d(
                &cur,
                &conv.w.mapv(f64::from),
                &conv.b.mapv(f64::from),
                conv.stride,
                conv.pad,
            );
            let post = reference::relu4(&pre);
            cur = if pool { reference::maxpool2(&post) } else { post };
            out.push(cur.clone());
        }
        out
    }

    /// Exact `f64` logits through the naive reference ops.
    pub fn logits_f64(&self, x: &Array4<f64>) -> Array2<f64> {
        let n = x.dim().0;
        let mut cur = x.clone();
        for (conv, &pool) in self.convs.iter().zip(&self.pools) {
            let pre = reference::conv2d(
                &cur,
                &conv.w.mapv(f64::from),
                &conv.b.mapv(f64::from),
                conv.stride,
                conv.pad,
            );
            let post = reference::relu4(&pre);
            cur = if pool { reference::maxpool2(&post) } else { post };
        }
        let flat_len = cur.len() / n;
        let mut h2 = cur.into_shape_with_order((n, flat_len)).unwrap();
        for (i, fc) in self.fcs.iter().enumerate() {
            let pre = reference::linear(&h2, &fc.w.mapv(f64::from), &fc.b.mapv(f64::from));
            h2 = if i + 1 < self.fcs.len() { reference::relu2(&pre) } else { pre };
        }
        h2
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.state_tensors())
    }
}

impl ParamCollect for ConvNet {
    fn learnables(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend(c.learnables());
        }
        for f in &self.fcs {
            out.extend(f.learnables());
        }
        out
    }
    fn learnables_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.learnables_mut());
        }
        for f in &mut self.fcs {
            out.extend(f.learnables_mut());
        }
        out
    }
    fn state_tensors(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.extend(scoped(&format!("conv{i}"), c.state_tensors()));
        }
        for (i, f) in self.fcs.iter().enumerate() {
            out.extend(scoped(&format!("fc{i}"), f.state_tensors()));
        }
        out
    }
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.extend(scoped_mut(&format!("conv{i}"), c.state_tensors_mut()));
        }
        for (i, f) in self.fcs.iter_mut().enumerate() {
            out.extend(scoped_mut(&format!("fc{i}"), f.state_tensors_mut()));
        }
        out
    }
}

impl Classifier for ConvNet {
    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.cfg.input_shape
    }

    fn logits(&self, x: &ImageBatch) -> Array2<f32> {
        let (logits, _) = self.forward_cached(x.data());
        logits
    }

    fn logits_vjp(&self, x: &ImageBatch, upstream: &Array2<f32>) -> Array4<f32> {
        let (_, cache) = self.forward_cached(x.data());
        self.backward(&cache, upstream, None)
    }

    fn loss_f64(&self, x: &ImageBatch, y: &LabelBatch) -> Array1<f64> {
        let logits = self.logits_f64(&x.data().mapv(f64::from));
        let mut out = Array1::zeros(logits.nrows());
        for (n, row) in logits.rows().into_iter().enumerate() {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse: f64 = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            out[n] = lse - logits[[n, y.labels()[n] as usize]];
        }
        out
    }
}

/// Classifier training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Supervised training with Adam and per-sample cross-entropy. Deterministic
/// given the seed. Errors if the loss becomes non-finite.
pub fn train_classifier(
    model: &mut ConvNet,
    images: &ImageBatch,
    labels: &LabelBatch,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if cfg.epochs == 0 {
        return Err(AdvError::Config("epochs must be >= 1".into()));
    }
    if images.len() != labels.len() {
        return Err(AdvError::Shape("image/label count mismatch".into()));
    }
    let n = images.len();
    let mut opt = Adam::new(cfg.learning_rate, 0.9, 0.999);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_stream(cfg.seed, (0x5u64 << 32) | epoch as u64);
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let xb = images.data().select(Axis(0), batch_idx);
            let yb: Vec<u32> = batch_idx.iter().map(|&i| labels.labels()[i]).collect();
            let yb = LabelBatch::new(Array1::from_vec(yb), labels.num_classes())?;
            let (logits, cache) = model.forward_cached(&xb);
            let per_sample = crate::core::classifier::cross_entropy_per_sample(&logits, &yb);
            let batch_loss: f64 = per_sample.sum();
            if !batch_loss.is_finite() {
                return Err(AdvError::Numeric("classifier training loss diverged".into()));
            }
            loss_sum += batch_loss;
            let preds = predictions(&logits);
            correct += preds.iter().zip(yb.labels()).filter(|(p, y)| p == y).count();

            let mut dlogits = crate::core::classifier::softmax_minus_onehot(&logits, &yb);
            dlogits.mapv_inplace(|v| v / batch_idx.len() as f32);
            let mut grads = model.zeros_like();
            model.backward(&cache, &dlogits, Some(&mut grads));
            let mut params = model.learnables_mut();
            let grad_slices = grads.learnables();
            opt.step(&mut params, &grad_slices);
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
        });
    }
    Ok(history)
}

/// Fisher-Yates with our seeded stream.
pub(crate) fn shuffle(order: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Header stored with classifier checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierCheckpointMeta {
    pub config: ConvNetConfig,
    pub seed: u64,
    pub epochs: usize,
    pub clean_test_accuracy: Option<f64>,
    pub dataset: Option<String>,
}

pub fn save_classifier(
    path: &Path,
    model: &ConvNet,
    meta: &ClassifierCheckpointMeta,
) -> Result<()> {
    container::write_container(path, meta, &model.state_tensors())
}

pub fn load_classifier(path: &Path) -> Result<(ConvNet, ClassifierCheckpointMeta)> {
    if !path.exists() {
        return Err(AdvError::MissingArtifact {
            what: format!("classifier checkpoint {}", path.display()),
            hint: "produce one with `advlab train-classifier`".into(),
        });
    }
    let (meta, tensors) = container::read_container::<ClassifierCheckpointMeta>(path)?;
    let mut model = ConvNet::new(meta.config.clone(), meta.seed)?;
    load_state_into(path, tensors, model.state_tensors_mut())?;
    Ok((model, meta))
}
