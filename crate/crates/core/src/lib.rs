//! Desk-scale semi-supervised learning lab.
//!
//! The crate bundles everything needed to train a small classifier with
//! SequenceMatch and its FixMatch / UDA baselines on tiny image datasets:
//!
//! - [`augment`]: 8-bit images, RandAugment transforms, cutout and the
//!   weak / medium / strong policies.
//! - [`problib`]: probability-vector math and every loss of the family,
//!   together with their gradients w.r.t. prediction logits.
//! - [`model`]: a ReLU multilayer perceptron with analytic backward pass and
//!   a binary checkpoint format.
//! - [`train`]: optimizer, schedules, EMA teacher and the training loop.
//! - [`data`]: datasets, labeled/unlabeled splits, long-tailed subsampling,
//!   synthetic blobs and directory loading.
//! - [`metrics`]: classification, AUC, calibration and SSL ratios.

pub mod augment;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod problib;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
