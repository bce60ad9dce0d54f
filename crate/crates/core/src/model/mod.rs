//! A toy deeply-supervised segmenter: two stride-2 encoder stages, scale
//! attention over the two feature scales, and two ×2 decoder stages that each
//! consume the previous prediction. Heads at 1/4, 1/2 and full resolution.
//! Gradients are computed by hand, see [`backward`].

mod adam;
mod attention;
mod net;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use attention::{scale_attention_backward, scale_attention_fuse, FeaturePyramid, Gate, GateGrads, SaCache};
pub use net::{backward, forward, ForwardCache, Prediction};
pub use params::{init_params, slot, ArchConfig, ModelParams, Param};
pub use tensor::{sigmoid, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::BinaryMask;
    use crate::imgcore::{GrayImage, Grid, Label, TriMask};
    use crate::losses::{finite_diff_check, rls_loss, seg_loss, LossConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    /// Params with nonzero heads so gradients reach every layer.
    fn live_params(seed: u64, arch: ArchConfig) -> ModelParams {
        let mut p = init_params(seed, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for s in [
            slot::HEAD1_W,
            slot::HEAD2_W,
            slot::HEAD3_W,
            slot::HEAD1_B,
            slot::HEAD2_B,
            slot::HEAD3_B,
        ] {
            p.get_mut(s).iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn fresh_model_outputs_half() {
        let p = init_params(0, ArchConfig::default());
        let out = forward(&random_image(1, 32, 32), &p).unwrap();
        let dims: Vec<_> = out.maps.iter().map(|m| m.dims()).collect();
        assert_eq!(dims, vec![(8, 8), (16, 16), (32, 32)]);
        assert!(out.maps.iter().all(|m| m.data().iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn rejects_indivisible_input() {
        let p = init_params(0, ArchConfig::default());
        assert!(forward(&random_image(1, 30, 32), &p).is_err());
    }

    #[test]
    fn outputs_in_open_unit_interval_and_deterministic() {
        let p = live_params(
            4,
            ArchConfig {
                channels: 6,
                sa_enabled: true,
            },
        );
        let img = random_image(2, 16, 12);
        let a = forward(&img, &p).unwrap();
        let b = forward(&img, &p).unwrap();
        for (x, y) in a.maps.iter().zip(&b.maps) {
            assert_eq!(x, y);
            assert!(x.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn translation_equivariance_in_interior() {
        let p = live_params(
            5,
            ArchConfig {
                channels: 4,
                sa_enabled: false,
            },
        );
        let img = random_image(3, 32, 32);
        let shifted = GrayImage::from_fn(32, 32, |x, y| *img.get((x + 32 - 4) % 32, y));
        let a = forward(&img, &p).unwrap();
        let b = forward(&shifted, &p).unwrap();
        for y in 12..20 {
            for x in 12..20 {
                assert!((a.maps[2].get(x, y) - b.maps[2].get(x + 4, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_output_grads_give_zero_param_grads() {
        let p = live_params(
            6,
            ArchConfig {
                channels: 3,
                sa_enabled: true,
            },
        );
        let out = forward(&random_image(4, 8, 8), &p).unwrap();
        let z: Vec<Grid<f64>> = out.maps.iter().map(|m| m.map(|_| 0.0)).collect();
        let g = backward(&out.cache, &p, [&z[0], &z[1], &z[2]]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(backward(&out.cache, &p, [&z[1], &z[1], &z[2]]).is_err());
    }

    #[test]
    fn gradients_are_linear_in_output_grads() {
        let p = live_params(
            7,
            ArchConfig {
                channels: 3,
                sa_enabled: true,
            },
        );
        let out = forward(&random_image(5, 8, 8), &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d: Vec<Grid<f64>> = out
            .maps
            .iter()
            .map(|m| m.map(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let d2: Vec<Grid<f64>> = d.iter().map(|m| m.map(|v| 2.0 * v)).collect();
        let g1 = backward(&out.cache, &p, [&d[0], &d[1], &d[2]]).unwrap().flatten();
        let g2 = backward(&out.cache, &p, [&d2[0], &d2[1], &d2[2]]).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    fn total_loss(
        p: &ModelParams,
        img: &GrayImage,
        masks: &[TriMask],
        region: &BinaryMask,
        cfg: &LossConfig,
    ) -> (f64, ModelParams) {
        let out = forward(img, p).unwrap();
        let seg = seg_loss(
            [&out.maps[0], &out.maps[1], &out.maps[2]],
            [&masks[0], &masks[1], &masks[2]],
            cfg,
        )
        .unwrap();
        let rls = rls_loss(&out.maps[2], img, region, cfg).unwrap();
        let mut d3 = seg.grads[2].clone();
        for (a, b) in d3.data_mut().iter_mut().zip(rls.grad.data()) {
            *a += cfg.rls_weight * b;
        }
        let g = backward(&out.cache, p, [&seg.grads[0], &seg.grads[1], &d3]).unwrap();
        (seg.value + cfg.rls_weight * rls.value, g)
    }

    #[test]
    fn whole_model_gradient_check() {
        for sa in [true, false] {
            let arch = ArchConfig {
                channels: 4,
                sa_enabled: sa,
            };
            let p = live_params(11, arch);
            let img = random_image(12, 8, 8);
            let gt = TriMask::from_fn(8, 8, |x, y| {
                if (x as i32 - 4).pow(2) + (y as i32 - 4).pow(2) <= 5 {
                    Label::Foreground
                } else if x == 0 {
                    Label::Ignore
                } else {
                    Label::Background
                }
            });
            let masks = vec![
                crate::imgcore::resample_nearest(&gt, 2, 2).unwrap(),
                crate::imgcore::resample_nearest(&gt, 4, 4).unwrap(),
                gt.clone(),
            ];
            let region = BinaryMask::from_fn(8, 8, |x, y| x > 0 && y > 0 && x < 7);
            let cfg = LossConfig::default();
            // Region means are recomputed inside the finite differences, the
            // analytic gradient holds them fixed; they coincide because the
            // weighted means are stationary.
            let (_, g) = total_loss(&p, &img, &masks, &region, &cfg);
            let mut probe = p.clone();
            let err = finite_diff_check(
                |x| {
                    probe.unflatten(x);
                    total_loss(&probe, &img, &masks, &region, &cfg).0
                },
                &p.flatten(),
                &g.flatten(),
                1e-5,
            );
            assert!(err < 1e-3, "sa={sa}: {err}");
        }
    }
}
