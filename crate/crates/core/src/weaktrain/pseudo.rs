use crate::error::{Error, Result};
use crate::imgcore::{resample_nearest, BinaryMask, Label, ProbMap, TriMask};

/// Full-resolution pseudo mask and its nearest-neighbour downsamples for the
/// heads at `dims[0]` (1/4) and `dims[1]` (1/2); `dims[2]` must match `pseudo`.
pub fn make_pseudo_masks(pseudo: &TriMask, dims: [(usize, usize); 3]) -> Result<[TriMask; 3]> {
    let (w, h) = pseudo.dims();
    if dims[2] != (w, h) {
        return Err(Error::ShapeMismatch {
            expected: (w, h),
            got: dims[2],
        });
    }
    for (k, factor) in [(0usize, 4usize), (1, 2)] {
        if dims[k].0 * factor != w || dims[k].1 * factor != h {
            return Err(Error::InvalidDims {
                width: dims[k].0,
                height: dims[k].1,
                msg: format!("expected 1/{factor} of {w}x{h}"),
            });
        }
    }
    Ok([
        resample_nearest(pseudo, dims[0].0, dims[0].1)?,
        resample_nearest(pseudo, dims[1].0, dims[1].1)?,
        pseudo.clone(),
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoUpdate {
    pub mask: TriMask,
    /// Set when `P ∩ e` is empty; the caller should keep the previous mask.
    pub retain_previous: bool,
}

/// `P = {p ≥ threshold}`; foreground `P ∩ e`, ignore `(P ∪ e) \ (P ∩ e)`,
/// background elsewhere.
pub fn update_pseudo_mask(p: &ProbMap, ellipse_mask: &BinaryMask, threshold: f64) -> Result<PseudoUpdate> {
    p.ensure_same_dims(ellipse_mask)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let labels: Vec<Label> = p
        .data()
        .iter()
        .zip(ellipse_mask.data())
        .map(|(&pv, &e)| match (pv >= threshold, e) {
            (true, true) => Label::Foreground,
            (false, false) => Label::Background,
            _ => Label::Ignore,
        })
        .collect();
    let mask = TriMask::from_vec(p.width(), p.height(), labels)?;
    let retain_previous = mask.count_label(Label::Foreground) == 0;
    Ok(PseudoUpdate { mask, retain_previous })
}
