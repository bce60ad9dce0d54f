//! Finite-difference checks of every analytic gradient on seeded random 8×8
//! instances. Used by the `gradcheck` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imgcore::{BinaryMask, GrayImage, Label, ProbMap, TriMask};
use crate::losses::{bce_loss, finite_diff_check, iou_loss, region_means, rls_loss, LossConfig, RegionMeans};
use crate::model::{
    init_params, scale_attention_backward, scale_attention_fuse, slot, ArchConfig, FeaturePyramid, Gate, Tensor,
};
use crate::recist::RecistAnnotation;
use crate::weaktrain::{sample_loss, RlsRegion, Sample};

pub const STEP: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
const SIDE: usize = 8;

/// Gates from slots 2..10 of a split parameter list.
fn gates(p: &[Vec<f64>]) -> [Gate<'_>; 2] {
    let g = |k: usize| Gate {
        w1: &p[k],
        b1: &p[k + 1],
        w2: &p[k + 2],
        b2: &p[k + 3],
    };
    [g(2), g(6)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn probs(rng: &mut ChaCha8Rng) -> ProbMap {
    ProbMap::from_fn(SIDE, SIDE, |_, _| rng.random_range(0.05..0.95))
}

fn labels(rng: &mut ChaCha8Rng) -> TriMask {
    TriMask::from_fn(SIDE, SIDE, |_, _| match rng.random_range(0..5) {
        0 => Label::Ignore,
        1 | 2 => Label::Foreground,
        _ => Label::Background,
    })
}

fn grid(x: &[f64]) -> ProbMap {
    ProbMap::from_vec(SIDE, SIDE, x.to_vec()).expect("8x8")
}

fn disk(r2: i32) -> BinaryMask {
    BinaryMask::from_fn(SIDE, SIDE, |x, y| (x as i32 - 4).pow(2) + (y as i32 - 4).pow(2) <= r2)
}

fn check_bce(rng: &mut ChaCha8Rng, cfg: &LossConfig) -> Result<f64> {
    let (p, g) = (probs(rng), labels(rng));
    let a = bce_loss(&p, &g, cfg.clamp_eps)?;
    Ok(finite_diff_check(
        |x| {
            bce_loss(&grid(x), &g, cfg.clamp_eps)
                .map(|l| l.value)
                .unwrap_or(f64::NAN)
        },
        p.data(),
        a.grad.data(),
        STEP,
    ))
}

fn check_iou(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (p, g) = (probs(rng), labels(rng));
    let a = iou_loss(&p, &g)?;
    Ok(finite_diff_check(
        |x| iou_loss(&grid(x), &g).map(|l| l.value).unwrap_or(f64::NAN),
        p.data(),
        a.grad.data(),
        STEP,
    ))
}

/// Region means are held at their values for the unperturbed prediction.
fn check_rls(rng: &mut ChaCha8Rng, cfg: &LossConfig) -> Result<f64> {
    let p = probs(rng);
    let img = GrayImage::from_fn(SIDE, SIDE, |_, _| rng.random::<f64>());
    let region = disk(9);
    let RegionMeans { c1, c2 } = region_means(&p, &img, &region)?;
    let n = region.count() as f64;
    let frozen = |x: &[f64]| {
        x.iter()
            .zip(img.data())
            .zip(region.data())
            .filter(|(_, &inside)| inside)
            .map(|((&pi, &v), _)| cfg.lambda1 * pi * (v - c1).powi(2) + cfg.lambda2 * (1.0 - pi) * (v - c2).powi(2))
            .sum::<f64>()
            / n
    };
    let a = rls_loss(&p, &img, &region, cfg)?;
    Ok(finite_diff_check(frozen, p.data(), a.grad.data(), STEP))
}

fn check_attention(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = 3;
    let hd = 2;
    let mut rv = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let half = SIDE / 2;
    let quarter = SIDE / 4;
    let sizes = [
        c * half * half,
        c * quarter * quarter,
        hd * c,
        hd,
        c * hd,
        c,
        hd * c,
        hd,
        c * hd,
        c,
    ];
    let flat: Vec<f64> = sizes.iter().flat_map(|&n| rv(n)).collect();
    let probe = rv(c * half * half);
    let split = |x: &[f64]| -> Vec<Vec<f64>> {
        let mut off = 0;
        sizes
            .iter()
            .map(|&n| {
                off += n;
                x[off - n..off].to_vec()
            })
            .collect()
    };
    let build = |p: &[Vec<f64>]| -> Result<FeaturePyramid> {
        Ok(FeaturePyramid {
            fine: Tensor::from_vec(c, half, half, p[0].clone())?,
            coarse: Tensor::from_vec(c, quarter, quarter, p[1].clone())?,
        })
    };
    let value = |x: &[f64]| -> f64 {
        let p = split(x);
        match build(&p).and_then(|pyr| scale_attention_fuse(&pyr, gates(&p))) {
            Ok((out, _)) => out.data.iter().zip(&probe).map(|(a, b)| a * b).sum(),
            Err(_) => f64::NAN,
        }
    };
    let p = split(&flat);
    let pyr = build(&p)?;
    let (_, cache) = scale_attention_fuse(&pyr, gates(&p))?;
    let dout = Tensor::from_vec(c, half, half, probe.clone())?;
    let (df, dc, gg) = scale_attention_backward(&pyr, gates(&p), &cache, &dout);
    let mut analytic = df.data;
    analytic.extend(dc.data);
    for g in gg {
        analytic.extend(g.w1);
        analytic.extend(g.b1);
        analytic.extend(g.w2);
        analytic.extend(g.b2);
    }
    Ok(finite_diff_check(value, &flat, &analytic, STEP))
}

/// Segmentation plus weighted level set loss through the whole network.
fn check_model(rng: &mut ChaCha8Rng, seed: u64, sa_enabled: bool, cfg: &LossConfig) -> Result<f64> {
    let arch = ArchConfig {
        channels: 4,
        sa_enabled,
    };
    let mut params = init_params(seed, arch);
    for s in [
        slot::HEAD1_W,
        slot::HEAD2_W,
        slot::HEAD3_W,
        slot::HEAD1_B,
        slot::HEAD2_B,
        slot::HEAD3_B,
    ] {
        params
            .get_mut(s)
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let image = GrayImage::from_fn(SIDE, SIDE, |_, _| rng.random::<f64>());
    let mut sample = Sample::from_annotation(
        "gradcheck",
        image,
        RecistAnnotation::new(((2.0, 4.0), (6.0, 4.0)), ((4.0, 2.5), (4.0, 5.5))),
        None,
    )?;
    sample.pseudo = labels(rng);
    let rls = Some(RlsRegion::Constrained);
    let (_, grads) = sample_loss(&params, &sample, cfg, rls)?;
    let mut probe = params.clone();
    Ok(finite_diff_check(
        |x| {
            probe.unflatten(x);
            sample_loss(&probe, &sample, cfg, rls)
                .map(|(l, _)| l.total)
                .unwrap_or(f64::NAN)
        },
        &params.flatten(),
        &grads.flatten(),
        STEP,
    ))
}

/// Runs every check `cases` times with streams derived from `seed`.
pub fn gradient_suite(seed: u64, cases: usize) -> Result<Vec<GradCheck>> {
    let cfg = LossConfig::default();
    let mut worst = [0.0f64; 6];
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(case as u64);
        let errs = [
            check_bce(&mut rng, &cfg)?,
            check_iou(&mut rng)?,
            check_rls(&mut rng, &cfg)?,
            check_attention(&mut rng)?,
            check_model(&mut rng, seed.wrapping_add(case as u64), true, &cfg)?,
            check_model(&mut rng, seed.wrapping_add(case as u64), false, &cfg)?,
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            // NaN must surface as a failure, so avoid f64::max here.
            if !(e <= *w) {
                *w = e;
            }
        }
    }
    let names = [
        "bce",
        "iou",
        "rls_frozen_means",
        "scale_attention",
        "model_with_attention",
        "model_without_attention",
    ];
    let tols = [
        LOSS_TOLERANCE,
        LOSS_TOLERANCE,
        LOSS_TOLERANCE,
        MODEL_TOLERANCE,
        MODEL_TOLERANCE,
        MODEL_TOLERANCE,
    ];
    Ok(names
        .iter()
        .zip(worst)
        .zip(tols)
        .map(|((&name, max_rel_error), tolerance)| GradCheck {
            name,
            max_rel_error,
            tolerance,
        })
        .collect())
}
