use super::{LossConfig, LossValueGrad};
use crate::error::{Error, Result};
use crate::imgcore::{Grid, ProbMap, TriMask};

/// Mean binary cross entropy over non-ignored pixels. Probabilities are clamped
/// to `[ε, 1-ε]` before the log; the gradient is zero where the clamp is active.
pub fn bce_loss(p: &ProbMap, g: &TriMask, eps: f64) -> Result<LossValueGrad> {
    p.ensure_same_dims(g)?;
    let n = g.data().iter().filter(|l| l.target().is_some()).count();
    if n == 0 {
        return Err(Error::AllIgnored);
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Grid::filled(p.width(), p.height(), 0.0);
    for ((&pi, li), gi) in p.data().iter().zip(g.data()).zip(grad.data_mut()) {
        let Some(t) = li.target() else { continue };
        let pc = pi.clamp(eps, 1.0 - eps);
        value -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        if pi > eps && pi < 1.0 - eps {
            *gi = -(t / pc - (1.0 - t) / (1.0 - pc)) * inv_n;
        }
    }
    Ok(LossValueGrad {
        value: value * inv_n,
        grad,
    })
}

/// Soft IoU loss `1 - Σgp / Σ(g + p - gp)` over non-ignored pixels.
///
/// An empty union (no foreground target, zero prediction) counts as a perfect
/// match: value 0 with zero gradient.
pub fn iou_loss(p: &ProbMap, g: &TriMask) -> Result<LossValueGrad> {
    p.ensure_same_dims(g)?;
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&pi, li) in p.data().iter().zip(g.data()) {
        if let Some(t) = li.target() {
            inter += t * pi;
            union += t + pi - t * pi;
        }
    }
    let mut grad = Grid::filled(p.width(), p.height(), 0.0);
    if union <= 0.0 {
        return Ok(LossValueGrad { value: 0.0, grad });
    }
    let u2 = union * union;
    for (li, gi) in g.data().iter().zip(grad.data_mut()) {
        if let Some(t) = li.target() {
            *gi = -(t * union - inter * (1.0 - t)) / u2;
        }
    }
    Ok(LossValueGrad {
        value: 1.0 - inter / union,
        grad,
    })
}

/// Deep-supervision loss: `Σ_k [bce(p_k, g_k) + iou(p_k, g_k)]`.
#[derive(Clone, Debug)]
pub struct SegLoss {
    pub value: f64,
    pub bce: [f64; 3],
    pub iou: [f64; 3],
    /// Gradient per scale, coarse to fine.
    pub grads: [Grid<f64>; 3],
}

pub fn seg_loss(preds: [&ProbMap; 3], masks: [&TriMask; 3], cfg: &LossConfig) -> Result<SegLoss> {
    let mut bce = [0.0; 3];
    let mut iou = [0.0; 3];
    let mut grads: Vec<Grid<f64>> = Vec::with_capacity(3);
    for k in 0..3 {
        preds[k].ensure_same_dims(masks[k])?;
        let b = bce_loss(preds[k], masks[k], cfg.clamp_eps)?;
        let i = iou_loss(preds[k], masks[k])?;
        bce[k] = b.value;
        iou[k] = i.value;
        let mut g = b.grad;
        for (a, d) in g.data_mut().iter_mut().zip(i.grad.data()) {
            *a += d;
        }
        grads.push(g);
    }
    let grads: [Grid<f64>; 3] = grads.try_into().expect("three scales");
    Ok(SegLoss {
        value: bce.iter().sum::<f64>() + iou.iter().sum::<f64>(),
        bce,
        iou,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::Label::{self, *};
    use crate::losses::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-7;

    fn pm(w: usize, v: &[f64]) -> ProbMap {
        ProbMap::from_vec(w, v.len() / w, v.to_vec()).unwrap()
    }

    fn tm(w: usize, v: &[Label]) -> TriMask {
        TriMask::from_vec(w, v.len() / w, v.to_vec()).unwrap()
    }

    fn random_case(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (ProbMap, TriMask) {
        let p = ProbMap::from_fn(w, h, |_, _| rng.random_range(0.05..0.95));
        let g = TriMask::from_fn(w, h, |_, _| match rng.random_range(0..5) {
            0 => Ignore,
            1 | 2 => Foreground,
            _ => Background,
        });
        (p, g)
    }

    #[test]
    fn bce_perfect_prediction_hits_clamp_floor() {
        let p = pm(2, &[1.0, 0.0, 1.0, 0.0]);
        let g = tm(2, &[Foreground, Background, Foreground, Background]);
        let r = bce_loss(&p, &g, EPS).unwrap();
        assert!(r.value <= -(1.0 - EPS).ln() + 1e-15);
        assert!(r.grad.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn bce_symmetry_point() {
        let r = bce_loss(&pm(1, &[0.5]), &tm(1, &[Foreground]), EPS).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_ignores_pixels() {
        let r = bce_loss(&pm(2, &[0.9, 0.2]), &tm(2, &[Foreground, Ignore]), EPS).unwrap();
        assert!((r.value + 0.9f64.ln()).abs() < 1e-15);
        assert_eq!(r.grad.data()[1], 0.0);
        assert!((r.grad.data()[0] + 1.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn bce_all_ignored_errors() {
        assert!(matches!(
            bce_loss(&pm(1, &[0.3]), &tm(1, &[Ignore]), EPS),
            Err(Error::AllIgnored)
        ));
    }

    #[test]
    fn iou_cases() {
        let g = tm(2, &[Foreground, Background, Foreground, Background]);
        let p = pm(2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(iou_loss(&p, &g).unwrap().value, 0.0);
        let p = pm(2, &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(iou_loss(&p, &g).unwrap().value, 1.0);
        let r = iou_loss(&pm(2, &[0.5, 0.5]), &tm(2, &[Foreground, Background])).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_empty_union_is_perfect() {
        let r = iou_loss(&pm(2, &[0.0, 0.0]), &tm(2, &[Background, Ignore])).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(bce_loss(&pm(2, &[0.5, 0.5]), &tm(1, &[Foreground, Foreground]), EPS).is_err());
        assert!(iou_loss(&pm(2, &[0.5, 0.5]), &tm(1, &[Foreground, Foreground])).is_err());
    }

    #[test]
    fn seg_loss_perfect_and_recomposed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = LossConfig::default();
        let masks: Vec<TriMask> = [2usize, 4, 8]
            .iter()
            .map(|&s| TriMask::from_fn(s, s, |_, _| if rng.random() { Foreground } else { Background }))
            .collect();
        let exact: Vec<ProbMap> = masks.iter().map(|m| m.map(|l| l.target().unwrap())).collect();
        let r = seg_loss(
            [&exact[0], &exact[1], &exact[2]],
            [&masks[0], &masks[1], &masks[2]],
            &cfg,
        )
        .unwrap();
        assert!(r.value <= 3.0 * -(1.0 - EPS).ln() + 1e-15);

        let preds: Vec<ProbMap> = [2usize, 4, 8]
            .iter()
            .map(|&s| ProbMap::from_fn(s, s, |_, _| rng.random_range(0.01..0.99)))
            .collect();
        let r = seg_loss(
            [&preds[0], &preds[1], &preds[2]],
            [&masks[0], &masks[1], &masks[2]],
            &cfg,
        )
        .unwrap();
        let independent: f64 = (0..3)
            .map(|k| bce_loss(&preds[k], &masks[k], EPS).unwrap().value + iou_loss(&preds[k], &masks[k]).unwrap().value)
            .sum();
        assert!((r.value - independent).abs() < 1e-12);
        assert!(seg_loss(
            [&preds[0], &preds[2], &preds[2]],
            [&masks[0], &masks[1], &masks[2]],
            &cfg
        )
        .is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let (p, g) = random_case(&mut rng, 8, 8);
            let b = bce_loss(&p, &g, EPS).unwrap();
            let err = finite_diff_check(
                |x| {
                    bce_loss(&ProbMap::from_vec(8, 8, x.to_vec()).unwrap(), &g, EPS)
                        .unwrap()
                        .value
                },
                p.data(),
                b.grad.data(),
                1e-5,
            );
            assert!(err < 1e-4, "bce {err}");
            let i = iou_loss(&p, &g).unwrap();
            let err = finite_diff_check(
                |x| {
                    iou_loss(&ProbMap::from_vec(8, 8, x.to_vec()).unwrap(), &g)
                        .unwrap()
                        .value
                },
                p.data(),
                i.grad.data(),
                1e-5,
            );
            assert!(err < 1e-4, "iou {err}");
        }
    }

    #[test]
    fn ranges_and_ignored_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (p, g) = random_case(&mut rng, 6, 5);
            let b = bce_loss(&p, &g, EPS).unwrap();
            let i = iou_loss(&p, &g).unwrap();
            assert!(b.value >= 0.0);
            assert!((0.0..=1.0).contains(&i.value));
            for (k, l) in g.data().iter().enumerate() {
                if *l == Ignore {
                    assert_eq!(b.grad.data()[k], 0.0);
                    assert_eq!(i.grad.data()[k], 0.0);
                }
            }
        }
    }
}
