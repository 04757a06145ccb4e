//! Image representation and the weak / medium / strong augmentation
//! policies.
//!
//! Medium and strong augmentation compose the weak policy, RandAugment with
//! one respectively three operations, and cutout, in that order.

mod pnm;
mod transforms;

pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use transforms::{apply_transform, Interpolation, TransformKind, TransformOptions, TransformSpec};

use crate::rng::RngStream;
use crate::{Error, Result};

/// Fill value for pixels vacated by geometric transforms and for cutout.
pub const MID_GRAY: u8 = 128;

/// Maximum weak-policy translation as a fraction of width / height.
pub const WEAK_TRANSLATE_FRACTION: f64 = 0.125;

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::param(format!(
                "pixel buffer holds {} values, expected {}x{}x{} = {}",
                pixels.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        let i = self.index(y, x, c);
        self.pixels[i] = v;
    }

    /// Flattened model input with intensities scaled to `[0, 1]`.
    pub fn to_input(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, x, c, self.get(y, self.width - 1 - x, c));
                }
            }
        }
        out
    }

    /// Integer shift by `(dy, dx)` pixels; vacated pixels become mid-gray.
    pub fn shift(&self, dy: i64, dx: i64) -> Image {
        if dy == 0 && dx == 0 {
            return self.clone();
        }
        let mut out = Image {
            pixels: vec![MID_GRAY; self.pixels.len()],
            ..*self
        };
        for y in 0..self.height as i64 {
            let sy = y - dy;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..self.width as i64 {
                let sx = x - dx;
                if sx < 0 || sx >= self.width as i64 {
                    continue;
                }
                for c in 0..self.channels {
                    out.set(y as usize, x as usize, c, self.get(sy as usize, sx as usize, c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentLevel {
    Weak,
    Medium,
    Strong,
}

impl AugmentLevel {
    pub fn policy(self) -> AugmentPolicy {
        AugmentPolicy::from_level(self)
    }
}

impl std::str::FromStr for AugmentLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" => Ok(Self::Weak),
            "medium" => Ok(Self::Medium),
            "strong" => Ok(Self::Strong),
            other => Err(Error::param(format!("unknown augmentation level `{other}`"))),
        }
    }
}

/// A weak, medium or strong augmentation recipe.
///
/// Fields are fixed by the level: weak uses no RandAugment operations and no
/// cutout, medium uses one operation plus cutout, strong three plus cutout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentPolicy {
    level: AugmentLevel,
    rand_augment_n: usize,
    use_cutout: bool,
}

impl AugmentPolicy {
    pub fn from_level(level: AugmentLevel) -> Self {
        let (rand_augment_n, use_cutout) = match level {
            AugmentLevel::Weak => (0, false),
            AugmentLevel::Medium => (1, true),
            AugmentLevel::Strong => (3, true),
        };
        Self {
            level,
            rand_augment_n,
            use_cutout,
        }
    }

    pub fn weak() -> Self {
        Self::from_level(AugmentLevel::Weak)
    }

    pub fn medium() -> Self {
        Self::from_level(AugmentLevel::Medium)
    }

    pub fn strong() -> Self {
        Self::from_level(AugmentLevel::Strong)
    }

    pub fn level(&self) -> AugmentLevel {
        self.level
    }

    pub fn rand_augment_n(&self) -> usize {
        self.rand_augment_n
    }

    pub fn use_cutout(&self) -> bool {
        self.use_cutout
    }
}

/// Tunables shared by every augmentation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Cutout side as a fraction of the shorter image side.
    pub cutout_fraction: f64,
    /// Draw enhancement factors as `1 ± m` instead of `m`.
    pub bidirectional_enhance: bool,
    pub interpolation: Interpolation,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            cutout_fraction: 0.5,
            bidirectional_enhance: false,
            interpolation: Interpolation::Nearest,
        }
    }
}

impl AugmentConfig {
    pub fn transform_options(&self) -> TransformOptions {
        TransformOptions {
            interpolation: self.interpolation,
        }
    }
}

/// One RandAugment draw: the operation and the magnitude it is applied with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawnOp {
    pub kind: TransformKind,
    pub magnitude: f64,
}

/// Draws `n` operations uniformly with replacement from the transform table.
///
/// Per operation the stream yields one index draw and one uniform magnitude
/// draw; with `bidirectional_enhance` enhancement kinds take one more draw
/// for the sign.
pub fn draw_ops(n: usize, rng: &mut RngStream, cfg: &AugmentConfig) -> Vec<DrawnOp> {
    let table = TransformSpec::table();
    (0..n)
        .map(|_| {
            let spec = table[rng.below(table.len())];
            let m = rng.uniform_in(spec.param_low, spec.param_high);
            let magnitude = if cfg.bidirectional_enhance && spec.kind.is_enhancement() {
                if rng.coin(0.5) {
                    1.0 + m
                } else {
                    1.0 - m
                }
            } else {
                m
            };
            DrawnOp {
                kind: spec.kind,
                magnitude,
            }
        })
        .collect()
}

pub fn rand_augment(img: &Image, n: usize, rng: &mut RngStream, cfg: &AugmentConfig) -> Result<Image> {
    let opts = cfg.transform_options();
    let mut out = img.clone();
    for op in draw_ops(n, rng, cfg) {
        out = apply_transform(&out, op.kind, op.magnitude, &opts)?;
    }
    Ok(out)
}

/// Side length of the cutout square for an image.
pub fn cutout_side(img: &Image, size_fraction: f64) -> usize {
    (size_fraction * img.height().min(img.width()) as f64).round() as usize
}

/// Sets a `side`×`side` square centred at `(cy, cx)` to mid-gray, clipped at
/// the borders. The square spans rows `cy - side/2 .. cy - side/2 + side`.
pub fn cutout_at(img: &Image, side: usize, cy: usize, cx: usize) -> Image {
    let mut out = img.clone();
    if side == 0 {
        return out;
    }
    let y0 = cy as i64 - (side / 2) as i64;
    let x0 = cx as i64 - (side / 2) as i64;
    let rows = y0.max(0)..(y0 + side as i64).min(img.height() as i64);
    for y in rows {
        let cols = x0.max(0)..(x0 + side as i64).min(img.width() as i64);
        for x in cols {
            for c in 0..img.channels() {
                out.set(y as usize, x as usize, c, MID_GRAY);
            }
        }
    }
    out
}

/// Cutout with a uniformly drawn centre pixel (row draw first, then column).
pub fn cutout(img: &Image, size_fraction: f64, rng: &mut RngStream) -> Result<Image> {
    if !(size_fraction > 0.0 && size_fraction <= 1.0) {
        return Err(Error::param(format!(
            "cutout size fraction must lie in (0, 1], got {size_fraction}"
        )));
    }
    let cy = rng.below(img.height());
    let cx = rng.below(img.width());
    Ok(cutout_at(img, cutout_side(img, size_fraction), cy, cx))
}

/// Weak policy: horizontal flip with probability 0.5, then an integer
/// translation of up to 12.5% of each side.
pub fn weak_augment(img: &Image, rng: &mut RngStream) -> Image {
    let flip = rng.coin(0.5);
    let max_dx = (WEAK_TRANSLATE_FRACTION * img.width() as f64).floor() as i64;
    let max_dy = (WEAK_TRANSLATE_FRACTION * img.height() as f64).floor() as i64;
    let dx = rng.int_in(-max_dx, max_dx);
    let dy = rng.int_in(-max_dy, max_dy);
    let flipped = if flip { img.flip_horizontal() } else { img.clone() };
    flipped.shift(dy, dx)
}

pub fn augment(img: &Image, policy: AugmentPolicy, rng: &mut RngStream, cfg: &AugmentConfig) -> Result<Image> {
    let mut out = weak_augment(img, rng);
    if policy.rand_augment_n() > 0 {
        out = rand_augment(&out, policy.rand_augment_n(), rng, cfg)?;
    }
    if policy.use_cutout() {
        out = cutout(&out, cfg.cutout_fraction, rng)?;
    }
    Ok(out)
}
