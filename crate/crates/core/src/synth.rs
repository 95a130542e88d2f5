//! Procedurally generated traversals: one distinct filtered-noise texture
//! per place. Used by the test suites and the `synth` CLI command so that
//! smoke tests never need committed binary assets.

use crate::data::Traversal;
use crate::gray::{GrayImage, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::nn::{derive_seed, Rng};

/// One frame of low-pass filtered noise, contrast-stretched into [0, 1].
/// Smoothing gives the texture enough spatial structure that moderate
/// geometric augmentation leaves it recognizable while strong augmentation
/// does not, which is the regime the training schema depends on.
pub fn synthetic_frame(rng: &mut Rng) -> GrayImage {
    let mut px: Vec<f64> = (0..IMAGE_WIDTH * IMAGE_HEIGHT)
        .map(|_| rng.next_f64())
        .collect();
    for _ in 0..2 {
        px = blur_pass(&px);
    }
    let min = px.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { 1.0 / (max - min) } else { 0.0 };
    let px = px.into_iter().map(|v| (v - min) * scale).collect();
    GrayImage::from_pixels(px).expect("generated pixels are valid")
}

/// Separable 5-tap binomial blur with reflected edges.
fn blur_pass(px: &[f64]) -> Vec<f64> {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let reflect = |i: i64, n: i64| -> usize {
        let m = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        m.clamp(0, n - 1) as usize
    };
    let mut horiz = vec![0.0; px.len()];
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let mut acc = 0.0;
            for (t, &k) in K.iter().enumerate() {
                let sx = reflect(x as i64 + t as i64 - 2, IMAGE_WIDTH as i64);
                acc += k * px[y * IMAGE_WIDTH + sx];
            }
            horiz[y * IMAGE_WIDTH + x] = acc;
        }
    }
    let mut out = vec![0.0; px.len()];
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let mut acc = 0.0;
            for (t, &k) in K.iter().enumerate() {
                let sy = reflect(y as i64 + t as i64 - 2, IMAGE_HEIGHT as i64);
                acc += k * horiz[sy * IMAGE_WIDTH + x];
            }
            out[y * IMAGE_WIDTH + x] = acc;
        }
    }
    out
}

/// A traversal of `frames` distinct textures. Each frame draws from its own
/// derived stream, so the set is stable under reordering or partial
/// generation.
pub fn synthetic_traversal(frames: usize, seed: u64) -> Traversal {
    let imgs = (0..frames)
        .map(|f| synthetic_frame(&mut Rng::new(derive_seed(seed, f as u64))))
        .collect();
    Traversal::from_frames(format!("synthetic-{seed}"), imgs)
}
