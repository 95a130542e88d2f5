//! The 64x32 grayscale frame every other module consumes, plus the area
//! resampler that produces it from arbitrary source resolutions.

use crate::error::{Error, Result};

pub const IMAGE_WIDTH: usize = 64;
pub const IMAGE_HEIGHT: usize = 32;
pub const IMAGE_PIXELS: usize = IMAGE_WIDTH * IMAGE_HEIGHT;

/// A 64x32 grayscale image, row-major, pixel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Wraps 2048 row-major pixels, clamping to [0, 1]. Non-finite values
    /// are rejected.
    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::dim("gray image pixels", IMAGE_PIXELS, pixels.len()));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("gray image contains non-finite pixels"));
        }
        let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(GrayImage { pixels })
    }

    pub fn constant(value: f64) -> Self {
        GrayImage {
            pixels: vec![value.clamp(0.0, 1.0); IMAGE_PIXELS],
        }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < IMAGE_WIDTH && y < IMAGE_HEIGHT);
        self.pixels[y * IMAGE_WIDTH + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(x < IMAGE_WIDTH && y < IMAGE_HEIGHT);
        self.pixels[y * IMAGE_WIDTH + x] = v.clamp(0.0, 1.0);
    }

    /// Builds a frame by evaluating `f(x, y)`; values are clamped.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
        for y in 0..IMAGE_HEIGHT {
            for x in 0..IMAGE_WIDTH {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage { pixels }
    }
}

/// Exact area-average resampling of a piecewise-constant source image. Each
/// destination pixel is the weighted mean of the source pixels its footprint
/// overlaps, with weights proportional to overlap area. When source and
/// destination grids coincide this is the identity.
pub fn area_resize(
    src: &[f64],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), src_w * src_h);
    assert!(src_w > 0 && src_h > 0 && dst_w > 0 && dst_h > 0);
    let x_spans = axis_spans(src_w, dst_w);
    let y_spans = axis_spans(src_h, dst_h);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for (y0, yw) in &y_spans {
        for (x0, xw) in &x_spans {
            let mut acc = 0.0;
            let mut area = 0.0;
            for (dy, &wy) in yw.iter().enumerate() {
                let row = (y0 + dy) * src_w;
                for (dx, &wx) in xw.iter().enumerate() {
                    acc += wy * wx * src[row + x0 + dx];
                    area += wy * wx;
                }
            }
            out.push(acc / area);
        }
    }
    out
}

/// For each destination index along one axis: the first overlapped source
/// cell and the per-cell overlap lengths.
fn axis_spans(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = (d + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src).max(first + 1);
            let weights = (first..last)
                .map(|c| (hi.min((c + 1) as f64) - lo.max(c as f64)).max(0.0))
                .collect();
            (first, weights)
        })
        .collect()
}
