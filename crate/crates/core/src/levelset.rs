//! Chan-Vese "active contours without edges" energy and a descent solver.
//!
//! The energy of a level set `φ` on image `v` is
//!
//! ```text
//! E = μ·Length(φ) + ν·Area(φ) + λ1 Σ (v - c1)² H(φ) + λ2 Σ (v - c2)² (1 - H(φ))
//! ```
//!
//! with `H` the arctangent-smoothed Heaviside, `Length = Σ |∇H(φ)|` from
//! central differences (replicated borders), `Area = Σ H(φ)`, and `c1`, `c2`
//! the `H`- and `(1-H)`-weighted means. Because the means minimize `E` for a
//! fixed `φ`, the fixed-means gradient is also the gradient of the reduced
//! energy, so refreshing the means every iteration keeps descent monotone.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, GrayImage, Grid, LevelSetField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub mu: f64,
    pub nu: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Heaviside smoothing width, pixels.
    pub eps: f64,
    /// Initial descent step; adapted by backtracking.
    pub step: f64,
    pub iters: usize,
    /// Stop once an accepted step changes `H(φ)` by less than this on average.
    /// `|φ|` keeps growing away from the contour, so the change is measured
    /// on the smoothed Heaviside, which saturates.
    pub tol: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            nu: 0.0,
            lambda1: 1.0,
            lambda2: 1.0,
            eps: 1.0,
            step: 0.1,
            iters: 1000,
            tol: 1e-5,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu >= 0.0
            && self.nu >= 0.0
            && self.lambda1 > 0.0
            && self.lambda2 > 0.0
            && self.eps > 0.0
            && self.step > 0.0
            && self.iters >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid Chan-Vese parameters {self:?}")));
        }
        Ok(())
    }
}

/// `½ (1 + (2/π) atan(z/ε))`.
#[inline]
pub fn smooth_heaviside(z: f64, eps: f64) -> f64 {
    0.5 * (1.0 + (2.0 / PI) * (z / eps).atan())
}

/// Derivative of [`smooth_heaviside`].
#[inline]
pub fn smooth_dirac(z: f64, eps: f64) -> f64 {
    eps / (PI * (eps * eps + z * z))
}

const LENGTH_SMOOTHING: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvEnergy {
    pub total: f64,
    pub length: f64,
    pub area: f64,
    pub c1: f64,
    pub c2: f64,
}

fn weighted_means(h: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    let (mut s1, mut w1, mut s2, mut w2) = (0.0, 0.0, 0.0, 0.0);
    for (&hi, &vi) in h.iter().zip(v) {
        s1 += hi * vi;
        w1 += hi;
        s2 += (1.0 - hi) * vi;
        w2 += 1.0 - hi;
    }
    if w1 <= 1e-12 || w2 <= 1e-12 {
        return Err(Error::DegenerateRegion(format!(
            "inside mass {w1:.3e}, outside mass {w2:.3e}"
        )));
    }
    Ok((s1 / w1, s2 / w2))
}

/// Central-difference gradient of `h` at `(x, y)` with replicated borders.
#[inline]
fn central(h: &[f64], w: usize, hgt: usize, x: usize, y: usize) -> (f64, f64) {
    let xl = x.saturating_sub(1);
    let xr = (x + 1).min(w - 1);
    let yu = y.saturating_sub(1);
    let yd = (y + 1).min(hgt - 1);
    (
        0.5 * (h[y * w + xr] - h[y * w + xl]),
        0.5 * (h[yd * w + x] - h[yu * w + x]),
    )
}

fn length_of(h: &[f64], w: usize, hgt: usize) -> f64 {
    let mut total = 0.0;
    for y in 0..hgt {
        for x in 0..w {
            let (gx, gy) = central(h, w, hgt, x, y);
            total += (gx * gx + gy * gy + LENGTH_SMOOTHING).sqrt();
        }
    }
    total
}

fn heaviside_field(phi: &LevelSetField, eps: f64) -> Vec<f64> {
    phi.data().iter().map(|&z| smooth_heaviside(z, eps)).collect()
}

/// Energy of `φ` with means taken at their optimum for this `φ`.
pub fn cv_energy_parts(phi: &LevelSetField, img: &GrayImage, cfg: &CvConfig) -> Result<CvEnergy> {
    phi.ensure_same_dims(img)?;
    let h = heaviside_field(phi, cfg.eps);
    let v = img.data();
    let (c1, c2) = weighted_means(&h, v)?;
    let length = if cfg.mu > 0.0 {
        length_of(&h, phi.width(), phi.height())
    } else {
        0.0
    };
    let area: f64 = h.iter().sum();
    let fit: f64 = h
        .iter()
        .zip(v)
        .map(|(&hi, &vi)| cfg.lambda1 * (vi - c1).powi(2) * hi + cfg.lambda2 * (vi - c2).powi(2) * (1.0 - hi))
        .sum();
    Ok(CvEnergy {
        total: cfg.mu * length + cfg.nu * area + fit,
        length,
        area,
        c1,
        c2,
    })
}

pub fn cv_energy(phi: &LevelSetField, img: &GrayImage, cfg: &CvConfig) -> Result<f64> {
    cv_energy_parts(phi, img, cfg).map(|e| e.total)
}

/// `∂E/∂φ` with the means held at `(c1, c2)`.
pub fn cv_energy_grad(phi: &LevelSetField, img: &GrayImage, cfg: &CvConfig, c1: f64, c2: f64) -> LevelSetField {
    let (w, hgt) = phi.dims();
    let h = heaviside_field(phi, cfg.eps);
    let mut dh: Vec<f64> = img
        .data()
        .iter()
        .map(|&v| cfg.nu + cfg.lambda1 * (v - c1).powi(2) - cfg.lambda2 * (v - c2).powi(2))
        .collect();
    if cfg.mu > 0.0 {
        for y in 0..hgt {
            for x in 0..w {
                let (gx, gy) = central(&h, w, hgt, x, y);
                let n = (gx * gx + gy * gy + LENGTH_SMOOTHING).sqrt();
                let ux = cfg.mu * 0.5 * gx / n;
                let uy = cfg.mu * 0.5 * gy / n;
                dh[y * w + (x + 1).min(w - 1)] += ux;
                dh[y * w + x.saturating_sub(1)] -= ux;
                dh[(y + 1).min(hgt - 1) * w + x] += uy;
                dh[y.saturating_sub(1) * w + x] -= uy;
            }
        }
    }
    let data = phi
        .data()
        .iter()
        .zip(dh)
        .map(|(&z, d)| d * smooth_dirac(z, cfg.eps))
        .collect();
    Grid::from_vec(w, hgt, data).expect("same shape")
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub mask: BinaryMask,
    pub phi: LevelSetField,
    /// Energy after initialization and after every accepted step.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a step would have emptied one phase; the last valid mask is returned.
    pub degenerate: bool,
}

const MAX_HALVINGS: usize = 40;
const STEP_GROWTH: f64 = 1.5;
const MAX_STEP_FACTOR: f64 = 100.0;

/// Explicit gradient descent on the Chan-Vese energy with backtracking, so
/// every recorded energy is no larger than the one before it.
///
/// The descent direction is scaled so its largest component is 1, making
/// `cfg.step` the largest per-pixel change of `φ` in one iteration.
pub fn cv_evolve(img: &GrayImage, init: &BinaryMask, cfg: &CvConfig) -> Result<CvResult> {
    cfg.validate()?;
    img.ensure_same_dims(init)?;
    let inside = init.count();
    if inside == 0 || inside == init.len() {
        return Err(Error::InvalidMask("initial mask must be neither empty nor full".into()));
    }
    let mut phi = init.map(|&b| if b { 1.0 } else { -1.0 });
    let mut cur = cv_energy_parts(&phi, img, cfg)?;
    let mut energies = vec![cur.total];
    let mut step = cfg.step;
    let max_step = cfg.step * MAX_STEP_FACTOR;
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;

    'outer: while iterations < cfg.iters {
        iterations += 1;
        let mut grad = cv_energy_grad(&phi, img, cfg, cur.c1, cur.c2);
        let gmax = grad.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !(gmax > 0.0) {
            converged = true;
            break;
        }
        grad.data_mut().iter_mut().for_each(|g| *g /= gmax);
        let mut halvings = 0;
        loop {
            let trial = Grid::from_vec(
                phi.width(),
                phi.height(),
                phi.data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&z, &g)| z - step * g)
                    .collect(),
            )
            .expect("same shape");
            match cv_energy_parts(&trial, img, cfg) {
                Ok(e) if e.total <= cur.total => {
                    let mean_delta = phi
                        .data()
                        .iter()
                        .zip(trial.data())
                        .map(|(&a, &b)| (smooth_heaviside(a, cfg.eps) - smooth_heaviside(b, cfg.eps)).abs())
                        .sum::<f64>()
                        / grad.len() as f64;
                    phi = trial;
                    cur = e;
                    energies.push(cur.total);
                    step = (step * STEP_GROWTH).min(max_step);
                    if mean_delta < cfg.tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                Ok(_) => {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        converged = true;
                        break 'outer;
                    }
                    step *= 0.5;
                }
                Err(Error::DegenerateRegion(_)) => {
                    degenerate = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
    }

    Ok(CvResult {
        mask: phi.map(|&z| z >= 0.0),
        phi,
        energies,
        iterations,
        converged,
        degenerate,
    })
}
