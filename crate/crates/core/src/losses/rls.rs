//! Regional level set loss.
//!
//! The Chan-Vese data term evaluated with soft memberships `p` and restricted
//! to a region `I'` around the lesion:
//!
//! ```text
//! l_rls = 1/|I'| Σ_{i∈I'} [ λ1 p(i) (v(i) - c1)² + λ2 (1 - p(i)) (v(i) - c2)² ]
//! ```
//!
//! `c1`, `c2` are the `p`- and `(1-p)`-weighted mean intensities over `I'`.

use super::{LossConfig, LossValueGrad};
use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, GrayImage, Grid, ProbMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMeans {
    /// Mean intensity weighted by `p`.
    pub c1: f64,
    /// Mean intensity weighted by `1 - p`.
    pub c2: f64,
}

/// How the gradient treats the region means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MeansMode {
    /// `c1`, `c2` are constants during backprop.
    #[default]
    Frozen,
    /// Differentiate through `c1(p)` and `c2(p)` as well.
    Full,
}

const MIN_MASS: f64 = 1e-12;

pub fn region_means(p: &ProbMap, img: &GrayImage, region: &BinaryMask) -> Result<RegionMeans> {
    p.ensure_same_dims(img)?;
    p.ensure_same_dims(region)?;
    let (mut s1, mut w1, mut s2, mut w2) = (0.0, 0.0, 0.0, 0.0);
    for ((&pi, &v), &inside) in p.data().iter().zip(img.data()).zip(region.data()) {
        if inside {
            s1 += pi * v;
            w1 += pi;
            s2 += (1.0 - pi) * v;
            w2 += 1.0 - pi;
        }
    }
    if w1 <= MIN_MASS || w2 <= MIN_MASS {
        return Err(Error::DegenerateRegion(format!(
            "foreground mass {w1:.3e}, background mass {w2:.3e}"
        )));
    }
    Ok(RegionMeans {
        c1: s1 / w1,
        c2: s2 / w2,
    })
}

pub fn rls_loss(p: &ProbMap, img: &GrayImage, region: &BinaryMask, cfg: &LossConfig) -> Result<LossValueGrad> {
    rls_loss_with_mode(p, img, region, cfg, MeansMode::Frozen)
}

pub fn rls_loss_with_mode(
    p: &ProbMap,
    img: &GrayImage,
    region: &BinaryMask,
    cfg: &LossConfig,
    mode: MeansMode,
) -> Result<LossValueGrad> {
    let RegionMeans { c1, c2 } = region_means(p, img, region)?;
    let n = region.count() as f64;
    let (l1, l2) = (cfg.lambda1, cfg.lambda2);
    let mut value = 0.0;
    let mut grad = Grid::filled(p.width(), p.height(), 0.0);
    for (((&pi, &v), &inside), gi) in p.data().iter().zip(img.data()).zip(region.data()).zip(grad.data_mut()) {
        if inside {
            let d1 = (v - c1) * (v - c1);
            let d2 = (v - c2) * (v - c2);
            value += l1 * pi * d1 + l2 * (1.0 - pi) * d2;
            *gi = (l1 * d1 - l2 * d2) / n;
        }
    }

    if mode == MeansMode::Full {
        // dL/dc1 = -2 λ1 Σ p (v - c1) / n, dc1/dp_i = (v_i - c1) / Σp; likewise for c2.
        let (mut r1, mut w1, mut r2, mut w2) = (0.0, 0.0, 0.0, 0.0);
        for ((&pi, &v), &inside) in p.data().iter().zip(img.data()).zip(region.data()) {
            if inside {
                r1 += pi * (v - c1);
                w1 += pi;
                r2 += (1.0 - pi) * (v - c2);
                w2 += 1.0 - pi;
            }
        }
        let dl_dc1 = -2.0 * l1 * r1 / n;
        let dl_dc2 = -2.0 * l2 * r2 / n;
        for ((&v, &inside), gi) in img.data().iter().zip(region.data()).zip(grad.data_mut()) {
            if inside {
                *gi += dl_dc1 * (v - c1) / w1 - dl_dc2 * (v - c2) / w2;
            }
        }
    }

    Ok(LossValueGrad { value: value / n, grad })
}
