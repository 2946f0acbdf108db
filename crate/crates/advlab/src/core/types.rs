//! Image batches, label batches, and perturbation budgets.

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{AdvError, Result};

/// A batch of images as a dense `(N, C, H, W)` array of `f32` in `[0, 1]`.
///
/// Construction validates the invariants once; afterwards the batch can be
/// passed around and consumed by classifiers and attacks without re-checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    data: Array4<f32>,
}

impl ImageBatch {
    /// Wraps an array, validating finiteness, the `[0,1]` range, and the
    /// dimension constraints (`N >= 1`, `C` in `{1,3}`, `H, W >= 1`).
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let (n, c, h, w) = data.dim();
        if n < 1 || h < 1 || w < 1 {
            return Err(AdvError::Shape(format!(
                "image batch dims must satisfy N,H,W >= 1, got ({n},{c},{h},{w})"
            )));
        }
        if c != 1 && c != 3 {
            return Err(AdvError::Shape(format!("channel count must be 1 or 3, got {c}")));
        }
        for &v in data.iter() {
            if !v.is_finite() {
                return Err(AdvError::Data("image batch contains a non-finite value".into()));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(AdvError::Data(format!("pixel value {v} outside [0,1]")));
            }
        }
        Ok(Self { data })
    }

    /// Clamps arbitrary finite data into `[0,1]` and wraps it.
    pub fn from_clamped(mut data: Array4<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AdvError::Data("cannot clamp a non-finite tensor".into()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    /// `(N, C, H, W)`.
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)` of a single image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.data.dim();
        (c, h, w)
    }

    /// Copies a contiguous sub-range of the batch.
    pub fn slice_range(&self, start: usize, end: usize) -> Self {
        Self { data: self.data.slice(ndarray::s![start..end, .., .., ..]).to_owned() }
    }
}

/// Integer class labels paired with an [`ImageBatch`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    labels: Array1<u32>,
    num_classes: usize,
}

impl LabelBatch {
    pub fn new(labels: Array1<u32>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(AdvError::Shape("label batch must be non-empty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(AdvError::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { labels, num_classes })
    }

    pub fn labels(&self) -> &Array1<u32> {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn slice_range(&self, start: usize, end: usize) -> Self {
        Self {
            labels: self.labels.slice(ndarray::s![start..end]).to_owned(),
            num_classes: self.num_classes,
        }
    }
}

/// Norm under which a perturbation budget is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    Linf,
    L2,
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::Linf => write!(f, "linf"),
            Norm::L2 => write!(f, "l2"),
        }
    }
}

/// A perturbation budget: the ball of radius `epsilon` (pixel-intensity
/// units on the `[0,1]` scale) around a clean image under `norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub norm: Norm,
    pub epsilon: f32,
}

impl PerturbationBudget {
    pub fn linf(epsilon: f32) -> Self {
        Self { norm: Norm::Linf, epsilon }
    }

    pub fn l2(epsilon: f32) -> Self {
        Self { norm: Norm::L2, epsilon }
    }

    /// `epsilon` must be non-negative; `+inf` denotes an unbounded budget
    /// (the C&W attack minimizes the norm instead of capping it).
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(AdvError::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}
