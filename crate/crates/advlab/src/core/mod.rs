//! Shared domain types, the differentiable-classifier contract, and
//! norm/projection utilities used by every other module.

pub(crate) mod classifier;
mod gradcheck;
mod ops;
mod types;

pub use classifier::{predictions, Classifier, LinearSoftmax};
pub use gradcheck::gradient_check;
pub use ops::{clip_to_box, clip_to_box_raw, project_linf, project_linf_raw};
pub use types::{ImageBatch, LabelBatch, Norm, PerturbationBudget};
