//! A small, deterministic CPU neural-network engine: convolution layers via
//! im2col + GEMM, explicit backward passes, and an Adam optimizer.
//!
//! Parameters live in `f32`. Batches are processed in fixed-size sample
//! chunks in parallel; all cross-chunk reductions happen in a fixed order so
//! results do not depend on thread scheduling.
//!
//! [`reference`] holds naive `f64` re-implementations of every op, used as
//! independent oracles in tests and as the high-precision path for
//! finite-difference self-checks.

mod adam;
mod conv;
mod init;
pub(crate) mod layers;
pub mod reference;

pub use adam::Adam;
pub use conv::{Conv2d, ConvTranspose2d};
pub use init::{rng_stream, WeightInit};
pub use layers::{
    dropout_forward, leaky_relu_backward, leaky_relu_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, BatchNorm2d, BnCache, Linear, MaxPool2d, PoolCache,
};

/// Fixed sample-chunk size for batch parallelism. Chunk boundaries, not
/// thread count, determine reduction order.
pub(crate) const CHUNK: usize = 8;

/// Learnable tensors and serializable state of a layer or network.
///
/// `learnables*` walks optimizer-visible tensors; `state*` additionally
/// includes non-learnable buffers (batch-norm running statistics). Both
/// walks are in a fixed structural order, so two instances of the same
/// architecture align element-wise — gradients are accumulated into a
/// zero-initialized mirror of the same type.
pub trait ParamCollect {
    fn learnables(&self) -> Vec<&[f32]>;
    fn learnables_mut(&mut self) -> Vec<&mut [f32]>;
    /// `(name, data)` pairs, including non-learnable state.
    fn state_tensors(&self) -> Vec<(String, &[f32])>;
    fn state_tensors_mut(&mut self) -> Vec<(String, &mut [f32])>;
}

/// Total number of learnable scalars.
pub fn param_count<P: ParamCollect>(p: &P) -> usize {
    p.learnables().iter().map(|s| s.len()).sum()
}

/// Prefixes child tensor names when composing networks from layers.
pub(crate) fn scoped<'a>(
    prefix: &str,
    tensors: Vec<(String, &'a [f32])>,
) -> Vec<(String, &'a [f32])> {
    tensors.into_iter().map(|(n, d)| (format!("{prefix}.{n}"), d)).collect()
}

pub(crate) fn scoped_mut<'a>(
    prefix: &str,
    tensors: Vec<(String, &'a mut [f32])>,
) -> Vec<(String, &'a mut [f32])> {
    tensors.into_iter().map(|(n, d)| (format!("{prefix}.{n}"), d)).collect()
}
