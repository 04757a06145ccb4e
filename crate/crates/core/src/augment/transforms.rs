//! The fourteen RandAugment operations.
//!
//! Pixel arithmetic happens in `f64`, is rounded to nearest and clamped to
//! `[0, 255]`. Geometric operations use inverse mapping about the image
//! centre (rotation) or the origin (shear / translate) and fill pixels that
//! map outside the source with mid-gray.

use super::{Image, MID_GRAY};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Autocontrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

impl TransformKind {
    pub const ALL: [TransformKind; 14] = [
        TransformKind::Autocontrast,
        TransformKind::Brightness,
        TransformKind::Color,
        TransformKind::Contrast,
        TransformKind::Equalize,
        TransformKind::Identity,
        TransformKind::Posterize,
        TransformKind::Rotate,
        TransformKind::Sharpness,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::Solarize,
        TransformKind::TranslateX,
        TransformKind::TranslateY,
    ];

    /// Blend-with-degenerate operations whose factor 1 returns the original.
    pub fn is_enhancement(self) -> bool {
        matches!(
            self,
            TransformKind::Brightness | TransformKind::Color | TransformKind::Contrast | TransformKind::Sharpness
        )
    }

    pub fn takes_magnitude(self) -> bool {
        !matches!(
            self,
            TransformKind::Autocontrast | TransformKind::Equalize | TransformKind::Identity
        )
    }

    pub fn spec(self) -> TransformSpec {
        let (param_low, param_high) = match self {
            TransformKind::Autocontrast | TransformKind::Equalize | TransformKind::Identity => (0.0, 0.0),
            TransformKind::Brightness
            | TransformKind::Color
            | TransformKind::Contrast
            | TransformKind::Sharpness => (0.05, 0.95),
            TransformKind::Posterize => (4.0, 8.0),
            TransformKind::Rotate => (-30.0, 30.0),
            TransformKind::ShearX | TransformKind::ShearY => (-0.3, 0.3),
            TransformKind::Solarize => (0.0, 1.0),
            TransformKind::TranslateX | TransformKind::TranslateY => (-0.3, 0.3),
        };
        TransformSpec {
            kind: self,
            param_low,
            param_high,
        }
    }

    /// Magnitudes accepted by [`apply_transform`].
    ///
    /// Equal to the sampling range except for the enhancement family, whose
    /// factors are meaningful on `[0, 2]` (0 = degenerate image, 1 = original,
    /// above 1 = bidirectional extrapolation).
    pub fn valid_domain(self) -> (f64, f64) {
        if self.is_enhancement() {
            (0.0, 2.0)
        } else {
            let s = self.spec();
            (s.param_low, s.param_high)
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        TransformKind::ALL
            .into_iter()
            .find(|k| format!("{k:?}").to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::param(format!("unknown transform `{s}`")))
    }
}

/// A table row: operation plus the range its magnitude is sampled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub param_low: f64,
    pub param_high: f64,
}

impl TransformSpec {
    pub fn table() -> [TransformSpec; 14] {
        TransformKind::ALL.map(TransformKind::spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Nearest,
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(Error::param(format!("unknown interpolation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransformOptions {
    pub interpolation: Interpolation,
}

pub fn apply_transform(img: &Image, kind: TransformKind, magnitude: f64, opts: &TransformOptions) -> Result<Image> {
    if !magnitude.is_finite() {
        return Err(Error::param(format!("{kind:?} magnitude must be finite")));
    }
    if kind.takes_magnitude() {
        let (lo, hi) = kind.valid_domain();
        if magnitude < lo || magnitude > hi {
            return Err(Error::param(format!(
                "{kind:?} magnitude {magnitude} outside [{lo}, {hi}]"
            )));
        }
    }
    let out = match kind {
        TransformKind::Identity => img.clone(),
        TransformKind::Autocontrast => autocontrast(img),
        TransformKind::Equalize => equalize(img),
        TransformKind::Brightness => blend(&Image::filled(img.height(), img.width(), img.channels(), 0)?, img, magnitude),
        TransformKind::Color => {
            if img.channels() == 1 {
                img.clone()
            } else {
                blend(&grayscale_rgb(img), img, magnitude)
            }
        }
        TransformKind::Contrast => {
            let mean = luma_mean(img);
            let degenerate = Image::filled(img.height(), img.width(), img.channels(), mean)?;
            blend(&degenerate, img, magnitude)
        }
        TransformKind::Sharpness => blend(&smooth(img), img, magnitude),
        TransformKind::Posterize => posterize(img, magnitude.round() as u32),
        TransformKind::Solarize => solarize(img, magnitude * 255.0),
        TransformKind::Rotate => {
            let theta = magnitude.to_radians();
            let (sin, cos) = theta.sin_cos();
            let cy = (img.height() as f64 - 1.0) / 2.0;
            let cx = (img.width() as f64 - 1.0) / 2.0;
            warp(img, opts.interpolation, |y, x| {
                let dy = y - cy;
                let dx = x - cx;
                (cy + dx * sin + dy * cos, cx + dx * cos - dy * sin)
            })
        }
        TransformKind::ShearX => warp(img, opts.interpolation, |y, x| (y, x + magnitude * y)),
        TransformKind::ShearY => warp(img, opts.interpolation, |y, x| (y + magnitude * x, x)),
        TransformKind::TranslateX => {
            let d = magnitude * img.width() as f64;
            warp(img, opts.interpolation, |y, x| (y, x - d))
        }
        TransformKind::TranslateY => {
            let d = magnitude * img.height() as f64;
            warp(img, opts.interpolation, |y, x| (y - d, x))
        }
    };
    Ok(out)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_pixels(img: &Image, f: impl Fn(usize, u8) -> u8) -> Image {
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &p)| f(i % img.channels(), p))
        .collect();
    Image::new(img.height(), img.width(), img.channels(), pixels).expect("shape preserved")
}

/// `degenerate + factor * (original - degenerate)`.
fn blend(degenerate: &Image, original: &Image, factor: f64) -> Image {
    let pixels = degenerate
        .pixels()
        .iter()
        .zip(original.pixels())
        .map(|(&d, &o)| {
            let d = f64::from(d);
            to_u8(d + factor * (f64::from(o) - d))
        })
        .collect();
    Image::new(original.height(), original.width(), original.channels(), pixels).expect("shape preserved")
}

fn luma(r: u8, g: u8, b: u8) -> u8 {
    to_u8(0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
}

fn grayscale_rgb(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let l = luma(img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2));
            for c in 0..3 {
                out.set(y, x, c, l);
            }
        }
    }
    out
}

/// Mean luma rounded to nearest, the flat image that contrast blends with.
fn luma_mean(img: &Image) -> u8 {
    let n = img.height() * img.width();
    let total: f64 = if img.channels() == 1 {
        img.pixels().iter().map(|&p| f64::from(p)).sum()
    } else {
        img.pixels()
            .chunks_exact(3)
            .map(|px| f64::from(luma(px[0], px[1], px[2])))
            .sum()
    };
    to_u8(total / n as f64)
}

fn autocontrast(img: &Image) -> Image {
    let c = img.channels();
    let mut lo = vec![u8::MAX; c];
    let mut hi = vec![u8::MIN; c];
    for (i, &p) in img.pixels().iter().enumerate() {
        lo[i % c] = lo[i % c].min(p);
        hi[i % c] = hi[i % c].max(p);
    }
    map_pixels(img, |ch, p| {
        if hi[ch] <= lo[ch] {
            p
        } else {
            // Integer rounding, halves up, so 127.5 does not land on 127.
            let span = u32::from(hi[ch] - lo[ch]);
            let num = u32::from(p - lo[ch]) * 255;
            ((2 * num + span) / (2 * span)) as u8
        }
    })
}

/// Per-channel histogram equalization with the classic cumulative lookup
/// table (the last occupied bin does not contribute to the step).
fn equalize(img: &Image) -> Image {
    let c = img.channels();
    let mut luts = Vec::with_capacity(c);
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for &p in img.pixels().iter().skip(ch).step_by(c) {
            hist[p as usize] += 1;
        }
        let occupied: Vec<usize> = hist.iter().copied().filter(|&h| h > 0).collect();
        let mut lut: [u8; 256] = std::array::from_fn(|i| i as u8);
        if occupied.len() > 1 {
            let step = (occupied.iter().sum::<usize>() - occupied[occupied.len() - 1]) / 255;
            if step > 0 {
                let mut n = step / 2;
                for (i, slot) in lut.iter_mut().enumerate() {
                    *slot = (n / step).min(255) as u8;
                    n += hist[i];
                }
            }
        }
        luts.push(lut);
    }
    map_pixels(img, |ch, p| luts[ch][p as usize])
}

fn posterize(img: &Image, bits: u32) -> Image {
    let mask: u8 = if bits >= 8 { 0xFF } else { 0xFFu8 << (8 - bits) };
    map_pixels(img, |_, p| p & mask)
}

fn solarize(img: &Image, threshold: f64) -> Image {
    map_pixels(img, |_, p| if f64::from(p) > threshold { 255 - p } else { p })
}

/// 3x3 smoothing kernel (centre weight 5, neighbours 1, normalised by 13);
/// border pixels keep their original value.
fn smooth(img: &Image) -> Image {
    let mut out = img.clone();
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..img.channels() {
                let mut acc = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let weight = if ky == 1 && kx == 1 { 5.0 } else { 1.0 };
                        acc += weight * f64::from(img.get(y + ky - 1, x + kx - 1, c));
                    }
                }
                out.set(y, x, c, to_u8(acc / 13.0));
            }
        }
    }
    out
}

/// Inverse-mapping resampler: `source(y, x)` gives the source coordinates of
/// output pixel `(y, x)`.
fn warp(img: &Image, interp: Interpolation, source: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = img.clone();
    let fetch = |y: i64, x: i64, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            f64::from(MID_GRAY)
        } else {
            f64::from(img.get(y as usize, x as usize, c))
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y as f64, x as f64);
            for c in 0..ch {
                let v = match interp {
                    Interpolation::Nearest => fetch(sy.round() as i64, sx.round() as i64, c),
                    Interpolation::Bilinear => {
                        let (y0, x0) = (sy.floor(), sx.floor());
                        let (fy, fx) = (sy - y0, sx - x0);
                        let (y0, x0) = (y0 as i64, x0 as i64);
                        let top = fetch(y0, x0, c) * (1.0 - fx) + fetch(y0, x0 + 1, c) * fx;
                        let bottom = fetch(y0 + 1, x0, c) * (1.0 - fx) + fetch(y0 + 1, x0 + 1, c) * fx;
                        top * (1.0 - fy) + bottom * fy
                    }
                };
                out.set(y, x, c, to_u8(v));
            }
        }
    }
    out
}
