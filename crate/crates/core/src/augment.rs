//! Single-transform image augmentation plus a random horizontal flip.
//!
//! One augmentation draws a transform kind uniformly, a strength bin
//! uniformly in 0..=30, and (for signed transforms) a random direction,
//! then applies that one transform. Color-only transforms are omitted:
//! frames are single-channel.
//!
//! Strength at bin 30: rotation 30 degrees, shear 0.3, translation 30% of
//! the axis, brightness/contrast/sharpness factor in [0.1, 1.9], posterize
//! down to 2 bits, solarize threshold swept from 1 to 0. Geometric
//! transforms sample bilinearly and fill vacated pixels with mid-gray 0.5
//! so the classifiers cannot latch onto artificial black borders.

use crate::gray::{GrayImage, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::nn::Rng;

pub const MAX_MAGNITUDE_BIN: u8 = 30;
const FILL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    Identity,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Brightness,
    Contrast,
    Sharpness,
    Posterize,
    Solarize,
    Autocontrast,
    Equalize,
}

pub const ALL_KINDS: [AugmentKind; 13] = [
    AugmentKind::Identity,
    AugmentKind::Rotate,
    AugmentKind::ShearX,
    AugmentKind::ShearY,
    AugmentKind::TranslateX,
    AugmentKind::TranslateY,
    AugmentKind::Brightness,
    AugmentKind::Contrast,
    AugmentKind::Sharpness,
    AugmentKind::Posterize,
    AugmentKind::Solarize,
    AugmentKind::Autocontrast,
    AugmentKind::Equalize,
];

/// One sampled transform: what to apply and how strongly. Bin 0 is
/// identity-strength, bin 30 the maximum listed above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentOp {
    pub kind: AugmentKind,
    pub magnitude_bin: u8,
}

impl AugmentOp {
    pub fn new(kind: AugmentKind, magnitude_bin: u8) -> Self {
        assert!(magnitude_bin <= MAX_MAGNITUDE_BIN);
        AugmentOp {
            kind,
            magnitude_bin,
        }
    }

    fn strength(&self) -> f64 {
        self.magnitude_bin as f64 / MAX_MAGNITUDE_BIN as f64
    }

    /// Applies the transform. `mirror` flips the direction of the signed
    /// transforms (rotation sense, shear sense, translation sense,
    /// enhancement factor above/below 1); unsigned transforms ignore it.
    pub fn apply(&self, img: &GrayImage, mirror: bool) -> GrayImage {
        let sgn = if mirror { -1.0 } else { 1.0 };
        let s = self.strength();
        match self.kind {
            AugmentKind::Identity => img.clone(),
            AugmentKind::Rotate => rotate(img, sgn * s * 30.0_f64.to_radians()),
            AugmentKind::ShearX => shear(img, sgn * s * 0.3, 0.0),
            AugmentKind::ShearY => shear(img, 0.0, sgn * s * 0.3),
            AugmentKind::TranslateX => {
                translate(img, (sgn * (s * 0.3 * IMAGE_WIDTH as f64).round()) as i64, 0)
            }
            AugmentKind::TranslateY => {
                translate(img, 0, (sgn * (s * 0.3 * IMAGE_HEIGHT as f64).round()) as i64)
            }
            AugmentKind::Brightness => brightness(img, 1.0 + sgn * s * 0.9),
            AugmentKind::Contrast => contrast(img, 1.0 + sgn * s * 0.9),
            AugmentKind::Sharpness => sharpness(img, 1.0 + sgn * s * 0.9),
            AugmentKind::Posterize => posterize(img, 8 - (s * 6.0).round() as u32),
            AugmentKind::Solarize => solarize(img, 1.0 - s),
            AugmentKind::Autocontrast => autocontrast(img),
            AugmentKind::Equalize => equalize(img),
        }
    }
}

/// Samples one transform kind and one strength bin uniformly and applies it
/// once.
pub fn trivial_augment(img: &GrayImage, rng: &mut Rng) -> GrayImage {
    let kind = ALL_KINDS[rng.below(ALL_KINDS.len())];
    let bin = rng.below(MAX_MAGNITUDE_BIN as usize + 1) as u8;
    let mirror = rng.chance(0.5);
    AugmentOp::new(kind, bin).apply(img, mirror)
}

/// Mirrors the columns with probability one half.
pub fn random_hflip(img: &GrayImage, rng: &mut Rng) -> GrayImage {
    if rng.chance(0.5) {
        hflip(img)
    } else {
        img.clone()
    }
}

pub fn hflip(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(|x, y| img.get(IMAGE_WIDTH - 1 - x, y))
}

/// The full two-step augmentation: one random transform, then a random
/// horizontal flip.
pub fn augment_pipeline(img: &GrayImage, rng: &mut Rng) -> GrayImage {
    random_hflip(&trivial_augment(img, rng), rng)
}

// --- geometric transforms ---------------------------------------------

/// Bilinear sample with out-of-bounds taps reading mid-gray.
fn sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let tap = |ix: i64, iy: i64| -> f64 {
        if ix >= 0 && iy >= 0 && (ix as usize) < IMAGE_WIDTH && (iy as usize) < IMAGE_HEIGHT {
            img.get(ix as usize, iy as usize)
        } else {
            FILL
        }
    };
    let ix = x0 as i64;
    let iy = y0 as i64;
    let top = tap(ix, iy) * (1.0 - fx) + tap(ix + 1, iy) * fx;
    let bot = tap(ix, iy + 1) * (1.0 - fx) + tap(ix + 1, iy + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// dst(x, y) = src(a*x + b*y + c, d*x + e*y + f), the inverse mapping.
fn inverse_affine(img: &GrayImage, coeff: [f64; 6]) -> GrayImage {
    let [a, b, c, d, e, f] = coeff;
    GrayImage::from_fn(|x, y| {
        let xf = x as f64;
        let yf = y as f64;
        sample(img, a * xf + b * yf + c, d * xf + e * yf + f)
    })
}

fn rotate(img: &GrayImage, angle: f64) -> GrayImage {
    let cx = (IMAGE_WIDTH - 1) as f64 / 2.0;
    let cy = (IMAGE_HEIGHT - 1) as f64 / 2.0;
    let (sin, cos) = angle.sin_cos();
    // Inverse rotation about the image center.
    inverse_affine(
        img,
        [
            cos,
            sin,
            cx - cos * cx - sin * cy,
            -sin,
            cos,
            cy + sin * cx - cos * cy,
        ],
    )
}

fn shear(img: &GrayImage, sx: f64, sy: f64) -> GrayImage {
    let cx = (IMAGE_WIDTH - 1) as f64 / 2.0;
    let cy = (IMAGE_HEIGHT - 1) as f64 / 2.0;
    // Forward map x' = x + sx*(y-cy), y' = y + sy*(x-cx); only one of sx,
    // sy is nonzero at a time so the inverse stays triangular.
    if sy == 0.0 {
        inverse_affine(img, [1.0, -sx, sx * cy, 0.0, 1.0, 0.0])
    } else {
        inverse_affine(img, [1.0, 0.0, 0.0, -sy, 1.0, sy * cx])
    }
}

fn translate(img: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    GrayImage::from_fn(|x, y| {
        let sx = x as i64 - dx;
        let sy = y as i64 - dy;
        if sx >= 0 && sy >= 0 && (sx as usize) < IMAGE_WIDTH && (sy as usize) < IMAGE_HEIGHT {
            img.get(sx as usize, sy as usize)
        } else {
            FILL
        }
    })
}

// --- photometric transforms -------------------------------------------

fn brightness(img: &GrayImage, factor: f64) -> GrayImage {
    GrayImage::from_fn(|x, y| img.get(x, y) * factor)
}

fn contrast(img: &GrayImage, factor: f64) -> GrayImage {
    let mean = img.pixels().iter().sum::<f64>() / img.pixels().len() as f64;
    GrayImage::from_fn(|x, y| mean + factor * (img.get(x, y) - mean))
}

fn sharpness(img: &GrayImage, factor: f64) -> GrayImage {
    // Blend between a 3x3 smoothed copy (factor 0) and the original
    // (factor 1); factors above 1 over-sharpen.
    let smooth = smooth3x3(img);
    GrayImage::from_fn(|x, y| {
        let s = smooth.get(x, y);
        s + factor * (img.get(x, y) - s)
    })
}

fn smooth3x3(img: &GrayImage) -> GrayImage {
    // Center-weighted kernel, total weight 13, edges replicated.
    GrayImage::from_fn(|x, y| {
        let mut acc = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let sx = (x as i64 + dx).clamp(0, IMAGE_WIDTH as i64 - 1) as usize;
                let sy = (y as i64 + dy).clamp(0, IMAGE_HEIGHT as i64 - 1) as usize;
                let w = if dx == 0 && dy == 0 { 5.0 } else { 1.0 };
                acc += w * img.get(sx, sy);
            }
        }
        acc / 13.0
    })
}

fn posterize(img: &GrayImage, bits: u32) -> GrayImage {
    let mask = (0xFFu32 << (8 - bits)) & 0xFF;
    GrayImage::from_fn(|x, y| {
        let level = (img.get(x, y) * 255.0).round() as u32 & mask;
        level as f64 / 255.0
    })
}

fn solarize(img: &GrayImage, threshold: f64) -> GrayImage {
    GrayImage::from_fn(|x, y| {
        let p = img.get(x, y);
        if p > threshold {
            1.0 - p
        } else {
            p
        }
    })
}

fn autocontrast(img: &GrayImage) -> GrayImage {
    let min = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-12 {
        return img.clone();
    }
    let scale = 1.0 / (max - min);
    GrayImage::from_fn(|x, y| (img.get(x, y) - min) * scale)
}

fn equalize(img: &GrayImage) -> GrayImage {
    let mut hist = [0usize; 256];
    for &p in img.pixels() {
        hist[(p * 255.0).round() as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut running = 0;
    for (i, &h) in hist.iter().enumerate() {
        running += h;
        cdf[i] = running;
    }
    let cdf_min = cdf
        .iter()
        .cloned()
        .find(|&c| c > 0)
        .unwrap_or(0);
    let total = img.pixels().len();
    if total == cdf_min {
        // Flat image; nothing to spread.
        return img.clone();
    }
    let denom = (total - cdf_min) as f64;
    GrayImage::from_fn(|x, y| {
        let level = (img.get(x, y) * 255.0).round() as usize;
        (cdf[level] - cdf_min) as f64 / denom
    })
}
