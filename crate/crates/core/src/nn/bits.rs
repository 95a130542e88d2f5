//! Bit-packed storage for binary (+1/-1) weight matrices.
//!
//! A weight is one bit: set means +1, clear means -1. Training keeps a real
//! latent value per weight, clamped to [-1, +1]; the packed view is the
//! elementwise sign of the latents with sign(0) = +1, so the bit map is a
//! pure function of the latents.

use crate::error::{Error, Result};
use crate::nn::{RealMatrix, Rng};

const WORD_BITS: usize = 64;

/// Row-major bit matrix. Each row occupies `ceil(cols / 64)` little-endian
/// 64-bit words, least-significant bit first; pad bits in the last word of
/// a row are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBits {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl PackedBits {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS);
        PackedBits {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        let w = self.words[r * self.words_per_row + c / WORD_BITS];
        (w >> (c % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let idx = r * self.words_per_row + c / WORD_BITS;
        let mask = 1u64 << (c % WORD_BITS);
        if bit {
            self.words[idx] |= mask;
        } else {
            self.words[idx] &= !mask;
        }
    }

    /// Weight value at (r, c): +1.0 for a set bit, -1.0 for a clear bit.
    #[inline]
    pub fn sign(&self, r: usize, c: usize) -> f64 {
        if self.get(r, c) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    #[inline]
    pub(crate) fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    #[inline]
    pub(crate) fn all_words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    /// Serializes to a tightly packed bit stream: rows concatenated in
    /// order, bits LSB-first within each byte, no per-row padding. The
    /// total is `ceil(rows * cols / 8)` bytes.
    pub fn tight_bytes(&self) -> Vec<u8> {
        let total_bits = self.rows * self.cols;
        let mut out = vec![0u8; total_bits.div_ceil(8)];
        let mut cursor = 0usize;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    out[cursor / 8] |= 1 << (cursor % 8);
                }
                cursor += 1;
            }
        }
        out
    }

    /// Inverse of [`tight_bytes`](Self::tight_bytes).
    pub fn from_tight_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let expected = (rows * cols).div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::dim("packed bit payload", expected, bytes.len()));
        }
        let mut out = PackedBits::zeros(rows, cols);
        let mut cursor = 0usize;
        for r in 0..rows {
            for c in 0..cols {
                if (bytes[cursor / 8] >> (cursor % 8)) & 1 == 1 {
                    out.set(r, c, true);
                }
                cursor += 1;
            }
        }
        Ok(out)
    }
}

/// A binary weight matrix under training: real latents in [-1, +1] plus the
/// packed sign view, kept consistent on every mutation.
#[derive(Debug, Clone)]
pub struct BinaryLatentMatrix {
    rows: usize,
    cols: usize,
    latent: Vec<f64>,
    packed: PackedBits,
}

impl BinaryLatentMatrix {
    /// Latents drawn i.i.d. uniform on [-1, +1], symmetric around the
    /// binarization threshold so the initial bit pattern is unbiased.
    pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let latent: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self::from_latent(rows, cols, latent)
    }

    pub fn from_latent(rows: usize, cols: usize, mut latent: Vec<f64>) -> Self {
        assert_eq!(latent.len(), rows * cols, "latent length");
        for v in &mut latent {
            *v = v.clamp(-1.0, 1.0);
        }
        let mut m = BinaryLatentMatrix {
            rows,
            cols,
            latent,
            packed: PackedBits::zeros(rows, cols),
        };
        m.repack();
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn packed(&self) -> &PackedBits {
        &self.packed
    }

    /// Weight sign at (r, c), derived from the latent: sign(0) is +1.
    #[inline]
    pub fn sign(&self, r: usize, c: usize) -> f64 {
        self.packed.sign(r, c)
    }

    /// Mutates the latents (clamping to [-1, +1] afterwards) and rebuilds
    /// the packed view so reads stay consistent.
    pub fn update_latent(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.latent);
        for v in &mut self.latent {
            *v = v.clamp(-1.0, 1.0);
        }
        self.repack();
    }

    /// Direct mutable access for fused training loops. The caller must keep
    /// latents clamped and the packed view consistent; used by
    /// `baseline::BaselineClassifier::train`, which rewrites both together.
    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut PackedBits) {
        (&mut self.latent, &mut self.packed)
    }

    fn repack(&mut self) {
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.packed.set(r, c, self.latent[r * self.cols + c] >= 0.0);
            }
        }
        debug_assert!(self.latent.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

/// Sign matrix of the latents, in {-1, +1}, agreeing bit-for-bit with the
/// packed view.
pub fn binarize(m: &BinaryLatentMatrix) -> RealMatrix {
    let mut out = RealMatrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            out.set(r, c, m.sign(r, c));
        }
    }
    out
}

/// Straight-through gradient estimator for the sign binarization: upstream
/// gradients pass wherever |latent| <= 1 and are blocked outside. The bound
/// is inclusive, so weights saturated at the clamp boundary can re-enter
/// the interior. Since latents are kept clamped to [-1, +1], this is a
/// pass-through in practice, but the mask is applied rather than assumed.
pub fn ste_grad(upstream: &RealMatrix, latent: &BinaryLatentMatrix) -> Result<RealMatrix> {
    if upstream.rows() != latent.rows() || upstream.cols() != latent.cols() {
        return Err(Error::dim(
            "ste_grad shape",
            latent.rows() * latent.cols(),
            upstream.rows() * upstream.cols(),
        ));
    }
    let mut out = RealMatrix::zeros(upstream.rows(), upstream.cols());
    let lat = latent.latent();
    for (i, g) in out.as_mut_slice().iter_mut().enumerate() {
        *g = if lat[i].abs() <= 1.0 {
            upstream.as_slice()[i]
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Multiplies a packed +1/-1 weight matrix by a real vector:
/// `out[r] = sum_j sign(r, j) * x[j]`, computed as `2 * (sum of x over set
/// bits) - (sum of all x)` so each row costs one masked pass.
pub fn packed_matvec(weights: &PackedBits, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != weights.cols() {
        return Err(Error::dim("packed_matvec input", weights.cols(), x.len()));
    }
    let total: f64 = x.iter().sum();
    let mut out = vec![0.0; weights.rows()];
    for (r, o) in out.iter_mut().enumerate() {
        let mut positive = 0.0;
        for (wi, &word) in weights.row_words(r).iter().enumerate() {
            let mut bits = word;
            let base = wi * WORD_BITS;
            while bits != 0 {
                let tz = bits.trailing_zeros() as usize;
                positive += x[base + tz];
                bits &= bits - 1;
            }
        }
        *o = 2.0 * positive - total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_sign_matvec(weights: &PackedBits, x: &[f64]) -> Vec<f64> {
        (0..weights.rows())
            .map(|r| (0..weights.cols()).map(|c| weights.sign(r, c) * x[c]).sum())
            .collect()
    }

    #[test]
    fn binarize_all_zero_latents_is_plus_one() {
        let m = BinaryLatentMatrix::from_latent(2, 3, vec![0.0; 6]);
        let s = binarize(&m);
        assert!(s.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn binarize_sign_cases() {
        let m = BinaryLatentMatrix::from_latent(1, 2, vec![-0.3, 0.7]);
        let s = binarize(&m);
        assert_eq!(s.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn packed_view_agrees_with_per_element_sign() {
        let mut rng = Rng::new(1234);
        let m = BinaryLatentMatrix::random(5, 7, &mut rng);
        for r in 0..5 {
            for c in 0..7 {
                let expect = if m.latent()[r * 7 + c] >= 0.0 { 1.0 } else { -1.0 };
                assert_eq!(m.sign(r, c), expect, "at ({r},{c})");
                assert_eq!(m.packed().get(r, c), expect > 0.0);
            }
        }
    }

    #[test]
    fn binarize_is_idempotent_in_effect() {
        let mut rng = Rng::new(5);
        let m = BinaryLatentMatrix::random(4, 9, &mut rng);
        let once = binarize(&m);
        let again = binarize(&BinaryLatentMatrix::from_latent(
            4,
            9,
            once.as_slice().to_vec(),
        ));
        assert_eq!(once.as_slice(), again.as_slice());
    }

    #[test]
    fn matvec_all_positive_row() {
        let mut w = PackedBits::zeros(1, 64);
        for c in 0..64 {
            w.set(0, c, true);
        }
        let x = vec![1.0; 64];
        let out = packed_matvec(&w, &x).unwrap();
        assert_eq!(out, vec![64.0]);
    }

    #[test]
    fn matvec_all_negative_is_negated_sum() {
        let w = PackedBits::zeros(3, 10);
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let total: f64 = x.iter().sum();
        let out = packed_matvec(&w, &x).unwrap();
        for o in out {
            assert!((o + total).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_matches_naive_reference() {
        let mut rng = Rng::new(99);
        let m = BinaryLatentMatrix::random(8, 100, &mut rng);
        let x: Vec<f64> = (0..100).map(|_| rng.next_f64()).collect();
        let fast = packed_matvec(m.packed(), &x).unwrap();
        let slow = naive_sign_matvec(m.packed(), &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn matvec_rejects_bad_length() {
        let w = PackedBits::zeros(2, 5);
        assert!(matches!(
            packed_matvec(&w, &[1.0; 4]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn tight_bytes_round_trip_with_ragged_cols() {
        let mut rng = Rng::new(7);
        let m = BinaryLatentMatrix::random(6, 13, &mut rng);
        let bytes = m.packed().tight_bytes();
        assert_eq!(bytes.len(), (6 * 13usize).div_ceil(8));
        let back = PackedBits::from_tight_bytes(6, 13, &bytes).unwrap();
        assert_eq!(&back, m.packed());
    }

    #[test]
    fn ste_passes_interior_gradients() {
        let lat = BinaryLatentMatrix::from_latent(2, 2, vec![0.5; 4]);
        let up = RealMatrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, -4.0]);
        let g = ste_grad(&up, &lat).unwrap();
        assert_eq!(g.as_slice(), up.as_slice());
    }

    #[test]
    fn ste_passes_at_clamp_boundary() {
        let lat = BinaryLatentMatrix::from_latent(1, 2, vec![1.0, -1.0]);
        let up = RealMatrix::from_vec(1, 2, vec![0.7, -0.3]);
        let g = ste_grad(&up, &lat).unwrap();
        assert_eq!(g.as_slice(), up.as_slice());
    }

    #[test]
    fn ste_rejects_shape_mismatch() {
        let lat = BinaryLatentMatrix::from_latent(1, 2, vec![0.0, 0.0]);
        let up = RealMatrix::zeros(2, 2);
        assert!(ste_grad(&up, &lat).is_err());
    }

    #[test]
    fn update_latent_reclamps_and_repacks() {
        let mut m = BinaryLatentMatrix::from_latent(1, 2, vec![0.9, -0.9]);
        m.update_latent(|l| {
            l[0] += 5.0;
            l[1] += 1.0;
        });
        assert_eq!(m.latent()[0], 1.0);
        assert!((m.latent()[1] - 0.1).abs() < 1e-12);
        assert_eq!(m.sign(0, 1), 1.0);
    }
}
