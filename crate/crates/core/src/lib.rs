//! Synthetic SEM-like images of agglomerated, partially sintered spherical
//! particles with occlusion-aware ground truth, and the metric suite used to
//! score particle detectors against it.
//!
//! Pipeline stages:
//!
//! 1. **scene**: lognormal primary-particle sizes, sequential-attachment
//!    agglomerates, non-overlapping placement in the frame.
//! 2. **render**: orthographic implicit-surface rendering into depth,
//!    instance, diffuse and shadow maps; weighted compositing; blur, noise
//!    and quantization.
//! 3. **annotation**: per-particle visible (optionally convexified) masks,
//!    RLE encoding and the `annotations.json` interchange format.
//! 4. **metrics**: Feret diameter, solidity, PSD statistics, KL divergence,
//!    IoU, the AP family, percentage errors and MAPE.
//! 5. **hough**: circular Hough transform baseline detector.
//! 6. **lr**: learning-rate range-test fit, triangular cyclic schedule and
//!    early stopping.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hough;
pub mod io;
pub mod lr;
pub mod mask;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};

/// Version string recorded in manifests and run files.
pub const GENERATOR_VERSION: &str = concat!("pf-core ", env!("CARGO_PKG_VERSION"));
