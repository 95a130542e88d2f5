//! Minimal from-scratch numeric kernel: dense real matrices, bit-packed
//! binary matrices with straight-through gradients, dropout, softmax
//! cross-entropy and Adam. No autograd; every layer's backward pass is
//! written out by hand where it is used.

mod adam;
mod bits;
mod matrix;
mod ops;
mod rng;

pub use adam::AdamState;
pub use bits::{binarize, packed_matvec, ste_grad, BinaryLatentMatrix, PackedBits};
pub use matrix::RealMatrix;
pub use ops::{dropout, dropout_mask, softmax, softmax_ce};
pub use rng::{derive_seed, Rng};
