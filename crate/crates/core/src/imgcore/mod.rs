//! Raster types shared by every other module, the PGM codec, and geometric
//! resampling.
//!
//! Coordinates are continuous with pixel `(x, y)` covering `[x, x+1) x [y, y+1)`,
//! so its center sits at `(x + 0.5, y + 0.5)`. Annotations, ellipses and affine
//! transforms all live in this frame.

mod pgm;
mod raster;
mod warp;

pub use pgm::{decode_pgm, encode_mask_pgm, encode_pgm, read_pgm, write_pgm};
pub use raster::{BinaryMask, GrayImage, Grid, Label, LevelSetField, ProbMap, TriMask};
pub use warp::{apply_affine, resample, resample_nearest, warp_nearest, AffineTransform, Interp};
