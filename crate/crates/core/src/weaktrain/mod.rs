//! The weakly-supervised training procedure.
//!
//! 1. Every lesion starts with an ellipse pseudo mask fitted to its RECIST
//!    diameters, downsampled to the three supervised scales.
//! 2. Stage one trains with the segmentation loss alone; stage two adds the
//!    regional level set loss on the full-resolution head, scaled by
//!    `rls_weight`.
//! 3. Between rounds, the trained model's prediction `P` and the ellipse `e`
//!    give a new pseudo mask: `P ∩ e` foreground, `(P ∪ e) \ (P ∩ e)` ignored,
//!    everything else background. The model is then retrained from scratch.

mod augment;
mod config;
mod pseudo;
mod train;

pub use augment::{augment, gaussian_blur, prepare_sample, AugmentConfig, Augmented};
pub use config::{RlsRegion, TrainConfig};
pub use pseudo::{make_pseudo_masks, update_pseudo_mask, PseudoUpdate};
pub use train::{
    evaluate_params, lr_at, predict, predict_mask, sample_loss, train_rounds, train_stage, EpochRecord, RoundsOutput,
    SampleLoss, Stage, TrainHistory, TrainState,
};

use crate::error::Result;
use crate::imgcore::{BinaryMask, GrayImage, TriMask};
use crate::recist::{constrained_region, fit_ellipse, rasterize_ellipse, Ellipse, RecistAnnotation};

/// One training or evaluation lesion.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub annotation: RecistAnnotation,
    pub ellipse: Ellipse,
    /// Full-resolution pseudo mask.
    pub pseudo: TriMask,
    /// Constrained region for the regional level set loss.
    pub region: BinaryMask,
    /// `false` while `pseudo` is still the rasterized ellipse.
    pub refined: bool,
    pub gt_mask: Option<BinaryMask>,
}

impl Sample {
    /// Builds the ellipse pseudo mask and constrained region from the annotation.
    pub fn from_annotation(
        id: impl Into<String>,
        image: GrayImage,
        annotation: RecistAnnotation,
        gt_mask: Option<BinaryMask>,
    ) -> Result<Self> {
        if let Some(gt) = &gt_mask {
            image.ensure_same_dims(gt)?;
        }
        let ellipse = fit_ellipse(&annotation)?;
        let dims = image.dims();
        Ok(Self {
            id: id.into(),
            pseudo: rasterize_ellipse(&ellipse, dims).to_trimask(),
            region: constrained_region(&ellipse, dims),
            image,
            annotation,
            ellipse,
            refined: false,
            gt_mask,
        })
    }

    pub fn ellipse_mask(&self) -> BinaryMask {
        rasterize_ellipse(&self.ellipse, self.image.dims())
    }
}
