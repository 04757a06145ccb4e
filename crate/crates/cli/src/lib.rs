//! Experiment runner and reporting for seqlab: configs, per-seed training
//! jobs, summaries, comparisons, SVG plots and augmentation previews.

pub mod config;
pub mod plot;
pub mod preview;
pub mod run;
pub mod summary;

/// The desk-scale synthetic benchmark; append `train.algorithm=<name>`.
pub const SYNTHETIC_PRESET: &str = include_str!("../presets/synthetic.conf");

/// [`SYNTHETIC_PRESET`] with `algorithm` selected.
pub fn synthetic_preset(algorithm: seqlab_core::train::Algorithm) -> String {
    format!("{SYNTHETIC_PRESET}train.algorithm={}\n", algorithm.name())
}
