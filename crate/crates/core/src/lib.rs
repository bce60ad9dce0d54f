//! Weakly-supervised lesion segmentation from RECIST diameter annotations.
//!
//! The crate is organised around the pieces of the weak-supervision pipeline:
//!
//! - [`imgcore`]: raster types, PGM codec, resampling and affine warps.
//! - [`recist`]: ellipse fitting from the four RECIST endpoints, pseudo-mask
//!   rasterization and the lesion-adaptive constrained region.
//! - [`losses`]: binary cross entropy, IoU and the regional level set loss,
//!   all with analytic gradients, plus a finite-difference checker.
//! - [`levelset`]: classic Chan-Vese energy and an explicit descent solver.
//! - [`model`]: a small two-scale encoder/decoder with three supervised heads,
//!   scale attention and hand-written backpropagation.
//! - [`weaktrain`]: pseudo masks at three scales, augmentation, the two-stage
//!   loss schedule and multi-round pseudo-mask refinement.
//! - [`synthgen`]: synthetic lesions with ground truth for desk-scale checks.
//! - [`eval`]: precision / recall / Dice, summaries and report files.
//! - [`gradsuite`]: seeded finite-difference checks over losses and the model.
//! - [`cli`]: the `weakseg` command-line front end.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod imgcore;
pub mod levelset;
pub mod losses;
pub mod model;
pub mod recist;
pub mod synthgen;
pub mod weaktrain;

pub use error::{Error, Result};
