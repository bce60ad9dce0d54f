//! Training losses with analytic gradients with respect to the predicted
//! probabilities.
//!
//! Every loss returns a [`LossValueGrad`]. Gradients are plain per-pixel
//! grids so they can be fed straight into the model's backward pass.

mod gradcheck;
mod rls;
mod seg;

use serde::{Deserialize, Serialize};

pub use gradcheck::{finite_diff_check, rel_error};
pub use rls::{region_means, rls_loss, rls_loss_with_mode, MeansMode, RegionMeans};
pub use seg::{bce_loss, iou_loss, seg_loss, SegLoss};

use crate::error::{Error, Result};

/// Loss weights. Defaults: `λ1 = 1`, `λ2 = 3`, RLS weight `0.1`, log clamp `1e-7`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rls_weight: f64,
    pub clamp_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 3.0,
            rls_weight: 0.1,
            clamp_eps: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Config("clamp_eps must lie in (0, 0.5)".into()));
        }
        if !(self.rls_weight >= 0.0) {
            return Err(Error::Config("rls_weight must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    /// `∂loss/∂p(i)`, same shape as the prediction.
    pub grad: crate::imgcore::Grid<f64>,
}
