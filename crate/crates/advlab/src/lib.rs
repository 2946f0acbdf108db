//! Adversarial attack generation, image-purification defense, and a
//! reproducible evaluation harness for small image classifiers.
//!
//! The crate is organized around five subsystems:
//!
//! - [`core`] — shared domain types ([`core::ImageBatch`], [`core::LabelBatch`]),
//!   the differentiable-classifier contract ([`core::Classifier`]), norm and
//!   projection utilities, and a finite-difference gradient self-check.
//! - [`attacks`] — white-box attack procedures (FGSM, BIM, PGD, MI-FGSM,
//!   C&W-L2, DeepFool, Square, and a first-success composite) against any
//!   [`core::Classifier`].
//! - [`defense`] — a residual-augmented U-Net generator and PatchGAN
//!   discriminator trained as a conditional GAN to map attacked images back
//!   to clean ones, with L1 + perceptual + adversarial losses.
//! - [`datasets`] — dataset ingestion (IDX, CIFAR-10 binary, a built-in
//!   synthetic glyph set), adversarial-pair dataset construction, manifests,
//!   and a lossless binary tensor container.
//! - [`eval`] — accuracy/PSNR/MAE/generalizability metrics and the
//!   experiment protocols (defense table, generalizability matrix,
//!   cross-model transfer, robustness sweep, residual-block ablation).
//!
//! Everything is deterministic given the seeds recorded in run artifacts:
//! attacks derive one RNG stream per (seed, image index), training shuffles
//! and weight initialization are seeded, and all file formats round-trip
//! 32-bit tensors bit-exactly.

pub mod attacks;
pub mod classifiers;
pub mod container;
pub mod core;
pub mod datasets;
pub mod defense;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rundir;

pub use error::{AdvError, Result};
