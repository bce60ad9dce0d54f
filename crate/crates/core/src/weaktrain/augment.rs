use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::imgcore::{apply_affine, warp_nearest, AffineTransform, GrayImage, Label};
use crate::recist::{constrained_region, fit_ellipse, rasterize_ellipse, transform_annotation, REGION_AXIS_SCALE};

const MAX_ATTEMPTS: usize = 10;

/// Sampling ranges, all inclusive. Degenerate ranges (`lo == hi`) are allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub blur_sigma: [f64; 2],
    /// Shift the crop randomly while keeping the constrained region inside it.
    pub crop_jitter: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale: [0.8, 1.2],
            rotation_deg: [-30.0, 30.0],
            brightness: [-0.1, 0.1],
            contrast: [0.8, 1.2],
            blur_sigma: [0.0, 1.0],
            crop_jitter: true,
        }
    }
}

impl AugmentConfig {
    /// No geometric or photometric change beyond resizing.
    pub fn identity() -> Self {
        Self {
            scale: [1.0, 1.0],
            rotation_deg: [0.0, 0.0],
            brightness: [0.0, 0.0],
            contrast: [1.0, 1.0],
            blur_sigma: [0.0, 0.0],
            crop_jitter: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let ranges = [
            self.scale,
            self.rotation_deg,
            self.brightness,
            self.contrast,
            self.blur_sigma,
        ];
        if !ranges.iter().all(|&r| ordered(r)) {
            return Err(Error::Config("augment ranges must be finite and ordered".into()));
        }
        if self.scale[0] <= 0.0 || self.contrast[0] < 0.0 || self.blur_sigma[0] < 0.0 {
            return Err(Error::Config(
                "scale must be positive; contrast and blur non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub sample: Sample,
    /// Set when every attempt failed and the sample was only resized.
    pub warning: Option<String>,
}

fn draw(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn round4(v: f64) -> usize {
    (((v / 4.0).round() as usize) * 4).max(4)
}

/// Output dims whose long side is `long` and short side the nearest multiple of 4.
pub(crate) fn output_dims(dims: (usize, usize), long: usize) -> ((usize, usize), f64) {
    let (w, h) = dims;
    let k = long as f64 / w.max(h) as f64;
    let out = if w >= h {
        (long, round4(h as f64 * k))
    } else {
        (round4(w as f64 * k), long)
    };
    (out, k)
}

/// Long side used at test time: the image's own long side if it is a multiple
/// of 4 inside `[lo, hi]`, else the nearest valid bound.
pub(crate) fn inference_long_side(dims: (usize, usize), bounds: [usize; 2]) -> usize {
    let lo = bounds[0].div_ceil(4) * 4;
    let hi = bounds[1] / 4 * 4;
    let long = dims.0.max(dims.1);
    if long < lo {
        lo
    } else if long > hi {
        hi
    } else {
        round4(long as f64).clamp(lo, hi)
    }
}

/// Separable Gaussian blur with replicated borders; `sigma` below 0.05 is a no-op.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma < 0.05 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = img.dims();
    let pass = |src: &GrayImage, horizontal: bool| {
        GrayImage::from_fn(w, h, |x, y| {
            k.iter()
                .enumerate()
                .map(|(j, kv)| {
                    let o = j as isize - r;
                    let (sx, sy) = if horizontal {
                        ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                    };
                    kv * src.get(sx, sy)
                })
                .sum()
        })
    };
    pass(&pass(img, true), false)
}

fn geometric(sample: &Sample, cfg: &AugmentConfig, long: usize, rng: &mut impl Rng) -> Result<Sample> {
    let (w, h) = sample.image.dims();
    let (out, k) = output_dims((w, h), long);
    let s = draw(rng, cfg.scale) * k;
    let theta = draw(rng, cfg.rotation_deg).to_radians();
    let base = AffineTransform::translation(out.0 as f64 / 2.0, out.1 as f64 / 2.0)
        .compose(&AffineTransform::rotation(theta))
        .compose(&AffineTransform::scale(s, s))
        .compose(&AffineTransform::translation(-(w as f64) / 2.0, -(h as f64) / 2.0));

    let ann0 = transform_annotation(&sample.annotation, &base)?;
    let (x0, y0, x1, y1) = fit_ellipse(&ann0)?.scaled_axes(REGION_AXIS_SCALE).bbox();
    let mut offset = |lo: f64, hi: f64| -> f64 {
        if lo > hi {
            (lo + hi) / 2.0
        } else if cfg.crop_jitter && lo < hi {
            rng.random_range(lo..=hi)
        } else {
            0.0f64.clamp(lo, hi)
        }
    };
    let dx = offset(-x0, out.0 as f64 - x1);
    let dy = offset(-y0, out.1 as f64 - y1);
    let t = AffineTransform::translation(dx, dy).compose(&base);

    let annotation = transform_annotation(&sample.annotation, &t)?;
    let ellipse = fit_ellipse(&annotation)?;
    let ellipse_mask = rasterize_ellipse(&ellipse, out);
    if ellipse_mask.count() == 0 {
        return Err(Error::DegenerateAnnotation(
            "ellipse covers no pixel after transform".into(),
        ));
    }
    let fill = sample.image.data().iter().sum::<f64>() / sample.image.len() as f64;
    let pseudo = if sample.refined {
        warp_nearest(&sample.pseudo, &t, out, Label::Background)?
    } else {
        ellipse_mask.to_trimask()
    };
    Ok(Sample {
        id: sample.id.clone(),
        image: apply_affine(&sample.image, &t, out, fill)?,
        region: constrained_region(&ellipse, out),
        annotation,
        ellipse,
        pseudo,
        refined: sample.refined,
        gt_mask: match &sample.gt_mask {
            Some(g) => Some(warp_nearest(g, &t, out, false)?),
            None => None,
        },
    })
}

fn photometric(img: &GrayImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> GrayImage {
    let delta = draw(rng, cfg.brightness);
    let gain = draw(rng, cfg.contrast);
    let sigma = draw(rng, cfg.blur_sigma);
    let mean = img.data().iter().sum::<f64>() / img.len() as f64;
    let adjusted = img.map(|&v| (mean + gain * (v - mean) + delta).clamp(0.0, 1.0));
    gaussian_blur(&adjusted, sigma)
}

/// Resizes a sample to the inference long side without any other change.
pub fn prepare_sample(sample: &Sample, long_side: [usize; 2]) -> Result<Sample> {
    let long = inference_long_side(sample.image.dims(), long_side);
    if sample.image.dims().0.max(sample.image.dims().1) == long
        && sample.image.width().is_multiple_of(4)
        && sample.image.height().is_multiple_of(4)
    {
        return Ok(sample.clone());
    }
    geometric(
        sample,
        &AugmentConfig::identity(),
        long,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
}

/// Random geometric then photometric augmentation. The ellipse, constrained
/// region and (for unrefined samples) the pseudo mask are recomputed from the
/// mapped annotation. After repeated failures the sample is only resized.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, long_side: [usize; 2], rng: &mut impl Rng) -> Result<Augmented> {
    let lo = long_side[0].div_ceil(4);
    let hi = long_side[1] / 4;
    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let long = 4 * if lo == hi { lo } else { rng.random_range(lo..=hi) };
        match geometric(sample, cfg, long, rng) {
            Ok(mut s) => {
                s.image = photometric(&s.image, cfg, rng);
                return Ok(Augmented {
                    sample: s,
                    warning: None,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    let warning = format!(
        "sample {}: augmentation failed {MAX_ATTEMPTS} times ({}), using resized original",
        sample.id,
        last_err.map(|e| e.to_string()).unwrap_or_default()
    );
    Ok(Augmented {
        sample: prepare_sample(sample, long_side)?,
        warning: Some(warning),
    })
}
