//! Synthetic lesions with ground truth for desk-scale experiments.
//!
//! A lesion is star-shaped about its center: its boundary radius at angle `a`
//! is `r * (1 + irregularity * s(a))`, where `s` is a random mix of the 2nd to
//! 4th harmonics normalized into `[-1, 1]`. The RECIST annotation is measured
//! on the ground-truth mask the way a reader would: longest boundary chord,
//! then the longest chord near-perpendicular to it.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{encode_mask_pgm, read_pgm, write_pgm, BinaryMask, GrayImage};
use crate::recist::{constrained_region, fit_ellipse, read_annotations_csv, write_annotations_csv, RecistAnnotation};
use crate::weaktrain::Sample;

/// Short-axis chords may deviate this far from perpendicular.
pub const PERPENDICULAR_TOLERANCE_DEG: f64 = 5.0;
const HARMONICS: [f64; 3] = [2.0, 3.0, 4.0];
const MAX_PLACEMENT_TRIES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Square image side in pixels.
    pub size: usize,
    /// Inclusive range of the mean lesion radius.
    pub radius: [f64; 2],
    /// Inclusive range of the lesion-minus-background intensity; negative
    /// values give dark lesions.
    pub contrast: [f64; 2],
    pub irregularity: f64,
    pub noise: f64,
    pub distractors: usize,
    /// Inclusive radius range of distractor blobs.
    pub distractor_radius: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            radius: [8.0, 14.0],
            contrast: [0.25, 0.45],
            irregularity: 0.15,
            noise: 0.05,
            distractors: 0,
            distractor_radius: [2.5, 4.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.radius[0] >= 3.0 && self.radius[0] <= self.radius[1]) {
            return bad("radius range must start at 3 or more and be ordered");
        }
        if !(self.contrast[0] <= self.contrast[1]) || (self.contrast[0] <= 0.0 && self.contrast[1] >= 0.0) {
            return bad("contrast range must be ordered and exclude 0");
        }
        if self.contrast[0].abs().max(self.contrast[1].abs()) > 0.8 {
            return bad("contrast magnitude must be at most 0.8");
        }
        if !(0.0..1.0).contains(&self.irregularity) {
            return bad("irregularity must lie in [0, 1)");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        if !(self.distractor_radius[0] > 0.0 && self.distractor_radius[0] <= self.distractor_radius[1]) {
            return bad("distractor radius range must be positive and ordered");
        }
        let extent = 2.0 * self.radius[1] * (1.0 + self.irregularity) + 2.0;
        if extent > self.size as f64 {
            return Err(Error::InvalidDims {
                width: self.size,
                height: self.size,
                msg: format!("lesions up to {extent:.1} px across do not fit"),
            });
        }
        Ok(())
    }
}

/// Per-lesion generation parameters, one manifest row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionInfo {
    pub id: String,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub contrast: f64,
    pub background: f64,
    pub distractors: usize,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub samples: Vec<Sample>,
    pub manifest: Vec<LesionInfo>,
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn stamp_disk(img: &mut GrayImage, cx: f64, cy: f64, r: f64, value: f64) {
    let (w, h) = img.dims();
    for y in 0..h {
        for x in 0..w {
            if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= r {
                img.set(x, y, value);
            }
        }
    }
}

/// Draws one lesion. The ground-truth mask and annotation come first; any
/// distractors are then placed so they stay clear of the constrained region.
pub fn gen_lesion(cfg: &SynthConfig, id: &str, rng: &mut impl Rng) -> Result<(Sample, LesionInfo)> {
    cfg.validate()?;
    let n = cfg.size;
    let radius = uniform(rng, cfg.radius);
    let contrast = uniform(rng, cfg.contrast);
    let reach = radius * (1.0 + cfg.irregularity) + 1.0;
    let slack = n as f64 / 2.0 - reach;
    let jitter = (n as f64 / 8.0).min(slack.max(0.0));
    let cx = n as f64 / 2.0 + uniform(rng, [-jitter, jitter]);
    let cy = n as f64 / 2.0 + uniform(rng, [-jitter, jitter]);
    if cx - reach < 0.0 || cy - reach < 0.0 || cx + reach > n as f64 || cy + reach > n as f64 {
        return Err(Error::InvalidDims {
            width: n,
            height: n,
            msg: "lesion does not fit on the grid".into(),
        });
    }

    let mut amps: Vec<f64> = HARMONICS.iter().map(|_| uniform(rng, [-1.0, 1.0])).collect();
    let norm: f64 = amps.iter().map(|a| a.abs()).sum();
    if norm > 0.0 {
        amps.iter_mut().for_each(|a| *a /= norm);
    }
    let phases: Vec<f64> = HARMONICS.iter().map(|_| uniform(rng, [0.0, 2.0 * PI])).collect();
    let boundary = |angle: f64| {
        let s: f64 = HARMONICS
            .iter()
            .zip(&amps)
            .zip(&phases)
            .map(|((k, a), p)| a * (k * angle + p).cos())
            .sum();
        radius * (1.0 + cfg.irregularity * s)
    };
    let gt = BinaryMask::from_fn(n, n, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        dx.hypot(dy) <= boundary(dy.atan2(dx))
    });

    let (lo, hi) = if contrast > 0.0 {
        (0.1, 0.9 - contrast)
    } else {
        (0.1 - contrast, 0.9)
    };
    let background = uniform(rng, [lo, hi.max(lo)]);
    let lesion_value = background + contrast;
    let mut image = gt.map(|&inside| if inside { lesion_value } else { background });

    let annotation = derive_recist(&gt)?;
    let region = constrained_region(&fit_ellipse(&annotation)?, (n, n));
    let mut placed = 0;
    for _ in 0..cfg.distractors {
        for _ in 0..MAX_PLACEMENT_TRIES {
            let r = uniform(rng, cfg.distractor_radius);
            let x = uniform(rng, [r, n as f64 - r]);
            let y = uniform(rng, [r, n as f64 - r]);
            let blob = BinaryMask::from_fn(n, n, |px, py| (px as f64 + 0.5 - x).hypot(py as f64 + 0.5 - y) <= r);
            let clashes = blob
                .data()
                .iter()
                .zip(region.data().iter().zip(gt.data()))
                .any(|(&b, (&reg, &g))| b && (reg || g));
            if !clashes && blob.count() > 0 {
                stamp_disk(&mut image, x, y, r, lesion_value);
                placed += 1;
                break;
            }
        }
    }

    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }

    let info = LesionInfo {
        id: id.to_string(),
        cx,
        cy,
        radius,
        contrast,
        background,
        distractors: placed,
    };
    Ok((Sample::from_annotation(id, image, annotation, Some(gt))?, info))
}

fn component_count(mask: &BinaryMask) -> usize {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data()[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

fn boundary_points(mask: &BinaryMask) -> Vec<(f64, f64)> {
    let (w, h) = mask.dims();
    let inside =
        |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize && *mask.get(x as usize, y as usize);
    let mut pts = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(x, y) && !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1)) {
                pts.push((x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }
    pts
}

/// Measures RECIST diameters on a single-component mask (8-connectivity).
/// Long axis: farthest pair of boundary pixel centers. Short axis: longest
/// boundary chord within 5° of perpendicular to it.
pub fn derive_recist(gt: &BinaryMask) -> Result<RecistAnnotation> {
    match component_count(gt) {
        0 => return Err(Error::InvalidMask("mask is empty".into())),
        1 => {}
        k => return Err(Error::InvalidMask(format!("mask has {k} components"))),
    }
    let pts = boundary_points(gt);
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let mut long = (pts[0], pts[0]);
    let mut best = 0.0;
    for (i, &p) in pts.iter().enumerate() {
        for &q in &pts[i + 1..] {
            let d = d2(p, q);
            if d > best {
                best = d;
                long = (p, q);
            }
        }
    }
    if best <= 0.0 {
        return Err(Error::DegenerateAnnotation("single-pixel mask".into()));
    }
    let (ux, uy) = {
        let l = best.sqrt();
        ((long.1 .0 - long.0 .0) / l, (long.1 .1 - long.0 .1) / l)
    };
    let max_cos = PERPENDICULAR_TOLERANCE_DEG.to_radians().sin();
    let mut short = None;
    let mut best_short = 0.0;
    for (i, &p) in pts.iter().enumerate() {
        for &q in &pts[i + 1..] {
            let d = d2(p, q);
            if d <= best_short {
                continue;
            }
            let cos = ((q.0 - p.0) * ux + (q.1 - p.1) * uy).abs() / d.sqrt();
            if cos <= max_cos {
                best_short = d;
                short = Some((p, q));
            }
        }
    }
    let short = short.ok_or_else(|| Error::DegenerateAnnotation("no chord perpendicular to the long axis".into()))?;
    let mut ann = RecistAnnotation::new(long, short);
    if ann.long_length() < ann.short_length() {
        std::mem::swap(&mut ann.long_axis, &mut ann.short_axis);
    }
    Ok(ann)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` lesions with ids `000`, `001`, ...; lesion `i` depends only on
/// `(cfg, i)`.
pub fn gen_dataset(cfg: &SynthConfig, n: usize) -> Result<SynthDataset> {
    if n == 0 {
        return Err(Error::Empty("dataset size must be at least 1".into()));
    }
    cfg.validate()?;
    let mut samples = Vec::with_capacity(n);
    let mut manifest = Vec::with_capacity(n);
    for i in 0..n {
        let (s, info) = gen_lesion(cfg, &format!("{i:03}"), &mut sample_rng(cfg.seed, i))?;
        samples.push(s);
        manifest.push(info);
    }
    Ok(SynthDataset { samples, manifest })
}

/// Writes `images/ID.pgm`, `gt/ID.pgm`, `recist.csv` and `manifest.csv`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SynthDataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("gt"))?;
    let mut rows = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        write_pgm(dir.join("images").join(format!("{}.pgm", s.id)), &s.image)?;
        if let Some(gt) = &s.gt_mask {
            std::fs::write(dir.join("gt").join(format!("{}.pgm", s.id)), encode_mask_pgm(gt))?;
        }
        rows.push((s.id.clone(), s.annotation));
    }
    write_annotations_csv(dir.join("recist.csv"), &rows)?;
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    for m in &data.manifest {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset directory; `gt/` masks are optional per sample.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for (id, ann) in read_annotations_csv(dir.join("recist.csv"))? {
        let image = read_pgm(dir.join("images").join(format!("{id}.pgm")))?;
        let gt_path = dir.join("gt").join(format!("{id}.pgm"));
        let gt = if gt_path.exists() {
            Some(read_pgm(&gt_path)?.threshold(0.5))
        } else {
            None
        };
        out.push(Sample::from_annotation(id, image, ann, gt)?);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no annotations in {}", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::prf_dice;
    use crate::recist::rasterize_ellipse;

    fn disk_cfg(r: f64) -> SynthConfig {
        SynthConfig {
            radius: [r, r],
            irregularity: 0.0,
            noise: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn disk_gives_diameter_axes() {
        for r in [6.0, 10.0, 15.0] {
            let (s, _) = gen_lesion(&disk_cfg(r), "d", &mut sample_rng(5, 0)).unwrap();
            let a = &s.annotation;
            // Boundary pixel centers lie within one pixel inside the true circle.
            for len in [a.long_length(), a.short_length()] {
                assert!(len >= 2.0 * r - 2.0 && len <= 2.0 * r, "r {r}: {len}");
            }
        }
    }

    #[test]
    fn contrast_is_exact_without_noise() {
        let cfg = SynthConfig {
            contrast: [0.5, 0.5],
            noise: 0.0,
            ..SynthConfig::default()
        };
        let (s, _) = gen_lesion(&cfg, "c", &mut sample_rng(1, 0)).unwrap();
        let gt = s.gt_mask.as_ref().unwrap();
        let mean = |want: bool| {
            let v: Vec<f64> = s
                .image
                .data()
                .iter()
                .zip(gt.data())
                .filter(|(_, &g)| g == want)
                .map(|(v, _)| *v)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean(true) - mean(false) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        let a = gen_dataset(&cfg, 3).unwrap();
        let b = gen_dataset(&cfg, 3).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.manifest, b.manifest);
        let c = gen_dataset(&SynthConfig { seed: 1, ..cfg }, 3).unwrap();
        assert_ne!(a.samples[0].image, c.samples[0].image);
    }

    #[test]
    fn row_mask_is_degenerate() {
        let m = BinaryMask::from_fn(12, 3, |_, y| y == 1);
        assert!(matches!(derive_recist(&m), Err(Error::DegenerateAnnotation(_))));
    }

    #[test]
    fn rectangle_long_axis_matches_all_pairs() {
        let m = BinaryMask::from_fn(30, 30, |x, y| (5..15).contains(&x) && (5..25).contains(&y));
        let ann = derive_recist(&m).unwrap();
        let pts: Vec<(f64, f64)> = (0..900)
            .filter(|i| m.data()[*i])
            .map(|i| ((i % 30) as f64 + 0.5, (i / 30) as f64 + 0.5))
            .collect();
        let mut best: f64 = 0.0;
        for p in &pts {
            for q in &pts {
                best = best.max((p.0 - q.0).hypot(p.1 - q.1));
            }
        }
        assert!((ann.long_length() - best).abs() < 1e-12);
        assert!((best - 9f64.hypot(19.0)).abs() < 1e-12);
        ann.validate().unwrap();
    }

    #[test]
    fn empty_and_split_masks_rejected() {
        assert!(derive_recist(&BinaryMask::filled(5, 5, false)).is_err());
        let two = BinaryMask::from_fn(10, 10, |x, y| (x < 3 && y < 3) || (x > 6 && y > 6));
        assert!(matches!(derive_recist(&two), Err(Error::InvalidMask(_))));
        // Diagonal neighbours join under 8-connectivity.
        let diag = BinaryMask::from_fn(10, 10, |x, y| {
            (x < 3 && y < 3) || ((3..6).contains(&x) && (3..6).contains(&y))
        });
        assert!(derive_recist(&diag).is_ok());
    }

    #[test]
    fn ellipse_tracks_ground_truth() {
        let cfg = SynthConfig {
            radius: [10.0, 14.0],
            irregularity: 0.2,
            ..SynthConfig::default()
        };
        for s in gen_dataset(&cfg, 20).unwrap().samples {
            let e = rasterize_ellipse(&s.ellipse, s.image.dims());
            let d = prf_dice(&e, s.gt_mask.as_ref().unwrap()).unwrap().dice;
            assert!(d >= 0.8, "{}: {d}", s.id);
        }
    }

    #[test]
    fn star_convex_about_center() {
        let cfg = SynthConfig {
            irregularity: 0.5,
            ..SynthConfig::default()
        };
        let (s, info) = gen_lesion(&cfg, "x", &mut sample_rng(9, 2)).unwrap();
        let gt = s.gt_mask.unwrap();
        for k in 0..72 {
            let a = k as f64 * PI / 36.0;
            let mut transitions = 0;
            let mut prev = true;
            let mut t = 0.0;
            while t < 40.0 {
                let (x, y) = (info.cx + t * a.cos(), info.cy + t * a.sin());
                let cur = x >= 0.0 && y >= 0.0 && x < 64.0 && y < 64.0 && *gt.get(x as usize, y as usize);
                transitions += (cur != prev) as usize;
                prev = cur;
                t += 0.05;
            }
            // Pixel quantization may add short flickers at the edge only.
            assert!((1..=5).contains(&transitions), "angle {k}: {transitions}");
        }
    }

    #[test]
    fn distractors_avoid_region() {
        let cfg = SynthConfig {
            distractors: 3,
            noise: 0.0,
            ..SynthConfig::default()
        };
        let data = gen_dataset(&cfg, 10).unwrap();
        for (s, info) in data.samples.iter().zip(&data.manifest) {
            let gt = s.gt_mask.as_ref().unwrap();
            for ((v, &r), &g) in s.image.data().iter().zip(s.region.data()).zip(gt.data()) {
                if r && !g {
                    assert!((v - info.background).abs() < 1e-12);
                }
            }
            assert!(info.distractors > 0);
        }
    }

    #[test]
    fn dataset_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_dataset(&SynthConfig::default(), 2).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&data.samples) {
            assert_eq!(a.gt_mask, b.gt_mask);
            for (u, v) in a.image.data().iter().zip(b.image.data()) {
                assert!((u - v).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
