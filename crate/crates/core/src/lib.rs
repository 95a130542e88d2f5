//! Lightweight visual place recognition built from binary-weighted place
//! classifiers whose score vectors are fused by a small one-dimensional
//! convolutional network (the merger).
//!
//! The crate is organised around the lifecycle of one recognition system:
//!
//! - [`data`] loads an ordered traversal of images (one directory per
//!   environment pass, frame index = place label) and resizes every frame
//!   to 64x32 grayscale.
//! - [`baseline`] implements the binary-weighted classifier: a 2048-pixel
//!   input expanded through two bit-packed layers into N place scores.
//! - [`augment`] manufactures image variations (one random transform plus
//!   a random horizontal flip) so that several identically-trained
//!   classifiers start disagreeing, which is what makes fusing them useful.
//! - [`merger`] stacks the per-classifier score vectors into a q x N matrix
//!   and fuses them with a full-height 1-D convolution followed by a dense
//!   layer.
//! - [`pipeline`] ties it together: train q baselines on a single traversal,
//!   build an augmented score-matrix set, train the merger, predict.
//! - [`eval`] computes tolerance-based precision/recall curves, AUC and
//!   inference-latency statistics; [`model_file`] gives the system a
//!   bit-exact on-disk format.
//!
//! Everything is deterministic under a single seed; see [`nn::Rng`].

pub mod augment;
pub mod baseline;
pub mod data;
pub mod error;
pub mod eval;
pub mod gray;
pub mod merger;
pub mod model_file;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use augment::{augment_pipeline, random_hflip, trivial_augment, AugmentKind, AugmentOp};
pub use baseline::{BaselineClassifier, BaselineConfig, FrozenBaseline, ScoreVector};
pub use data::{load_traversal, Traversal};
pub use error::{Error, Result};
pub use eval::{bench_inference, evaluate, pr_curve, BenchReport, Evaluation, MatchResult, PrCurve};
pub use gray::{GrayImage, IMAGE_HEIGHT, IMAGE_PIXELS, IMAGE_WIDTH};
pub use merger::{conv1d_full_height, MergerNet, MergerOutput, ScoreMatrix};
pub use model_file::{load_system, save_system, serialized_len};
pub use nn::Rng;
pub use pipeline::{build_merger_set, train_system, SystemConfig, TrainReport, VprSystem};
pub use synth::synthetic_traversal;
