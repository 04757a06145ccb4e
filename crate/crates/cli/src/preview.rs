//! Standalone augmentation of a single image file.

use std::path::Path;

use anyhow::{Context, Result};
use seqlab_core::augment::{augment, read_pnm, write_pnm, AugmentConfig, AugmentLevel, Image};
use seqlab_core::rng::{Purpose, RngStream};

/// Applies `level` to `img` with the preview stream of `seed`.
pub fn preview_image(img: &Image, level: AugmentLevel, seed: u64, cfg: &AugmentConfig) -> Result<Image> {
    let mut rng = RngStream::derive(seed, Purpose::Preview, &[]);
    Ok(augment(img, level.policy(), &mut rng, cfg)?)
}

/// Reads a PGM/PPM file, augments it and writes the result in the same format.
pub fn augment_preview(input: &Path, level: AugmentLevel, seed: u64, output: &Path, cfg: &AugmentConfig) -> Result<()> {
    let img = read_pnm(input).with_context(|| format!("reading {}", input.display()))?;
    let out = preview_image(&img, level, seed, cfg)?;
    write_pnm(output, &out).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}
