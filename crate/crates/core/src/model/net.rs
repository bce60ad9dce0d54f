//! Forward and reverse passes of the segmenter.
//!
//! ```text
//! x ─conv s2─relu─▶ F1 (1/2) ─conv s2─relu─▶ F2 (1/4) ─head1─▶ p1
//!                   │                         │
//!                   └──── scale attention ◀── up(F2)
//!                               │
//!           [fused, up(p1)] ─conv─relu─▶ D1 (1/2) ─head2─▶ p2
//!           [up(D1), up(p2)] ─conv─relu─▶ D2 (1)  ─head3─▶ p3
//! ```

use super::attention::{scale_attention_backward, scale_attention_fuse, FeaturePyramid, Gate, SaCache};
use super::params::{slot, ModelParams};
use super::tensor::{
    conv3x3, conv3x3_backward, head, head_backward, relu, relu_backward, upsample2, upsample2_backward, Tensor,
};
use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, Grid, ProbMap};

#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Tensor,
    z1: Tensor,
    pyramid: FeaturePyramid,
    z2: Tensor,
    sa: Option<SaCache>,
    dec1_in: Tensor,
    z3: Tensor,
    a3: Tensor,
    dec2_in: Tensor,
    z4: Tensor,
    a4: Tensor,
    probs: [Tensor; 3],
}

#[derive(Clone, Debug)]
pub struct Prediction {
    /// Coarse to fine: 1/4, 1/2 and full resolution.
    pub maps: [ProbMap; 3],
    pub cache: ForwardCache,
}

fn gates(params: &ModelParams) -> [Gate<'_>; 2] {
    let g = |base: usize| Gate {
        w1: params.get(base),
        b1: params.get(base + 1),
        w2: params.get(base + 2),
        b2: params.get(base + 3),
    };
    [g(slot::SA_BASE), g(slot::SA_BASE + 4)]
}

fn to_map(t: &Tensor) -> ProbMap {
    Grid::from_vec(t.w, t.h, t.data.clone()).expect("single channel map")
}

pub fn forward(img: &GrayImage, params: &ModelParams) -> Result<Prediction> {
    let (w, h) = img.dims();
    if w % 4 != 0 || h % 4 != 0 {
        return Err(Error::InvalidDims {
            width: w,
            height: h,
            msg: "model input dimensions must be divisible by 4".into(),
        });
    }
    let input = Tensor::from_vec(1, h, w, img.data().to_vec())?;
    let z1 = conv3x3(&input, params.get(slot::ENC1_W), params.get(slot::ENC1_B), 2);
    let a1 = relu(&z1);
    let z2 = conv3x3(&a1, params.get(slot::ENC2_W), params.get(slot::ENC2_B), 2);
    let a2 = relu(&z2);
    let p1 = head(&a2, params.get(slot::HEAD1_W), params.get(slot::HEAD1_B)[0]);

    let pyramid = FeaturePyramid { fine: a1, coarse: a2 };
    let (fused, sa) = if params.arch.sa_enabled {
        let (f, c) = scale_attention_fuse(&pyramid, gates(params))?;
        (f, Some(c))
    } else {
        let mut f = upsample2(&pyramid.coarse);
        for (v, &a) in f.data.iter_mut().zip(&pyramid.fine.data) {
            *v = 0.5 * (*v + a);
        }
        (f, None)
    };

    let dec1_in = Tensor::concat(&fused, &upsample2(&p1));
    let z3 = conv3x3(&dec1_in, params.get(slot::DEC1_W), params.get(slot::DEC1_B), 1);
    let a3 = relu(&z3);
    let p2 = head(&a3, params.get(slot::HEAD2_W), params.get(slot::HEAD2_B)[0]);

    let dec2_in = Tensor::concat(&upsample2(&a3), &upsample2(&p2));
    let z4 = conv3x3(&dec2_in, params.get(slot::DEC2_W), params.get(slot::DEC2_B), 1);
    let a4 = relu(&z4);
    let p3 = head(&a4, params.get(slot::HEAD3_W), params.get(slot::HEAD3_B)[0]);

    Ok(Prediction {
        maps: [to_map(&p1), to_map(&p2), to_map(&p3)],
        cache: ForwardCache {
            input,
            z1,
            pyramid,
            z2,
            sa,
            dec1_in,
            z3,
            a3,
            dec2_in,
            z4,
            a4,
            probs: [p1, p2, p3],
        },
    })
}

/// Reverse pass: parameter gradients given `dL/dp_k` for the three maps.
pub fn backward(cache: &ForwardCache, params: &ModelParams, dprobs: [&Grid<f64>; 3]) -> Result<ModelParams> {
    for (d, p) in dprobs.iter().zip(&cache.probs) {
        if d.dims() != (p.w, p.h) {
            return Err(Error::ShapeMismatch {
                expected: (p.w, p.h),
                got: d.dims(),
            });
        }
    }
    let c = params.arch.channels;
    let mut grads = ModelParams::zeros(params.arch);

    // Full-resolution head and second decoder stage.
    let (mut da4, dw, db) = head_backward(&cache.a4, params.get(slot::HEAD3_W), &cache.probs[2], dprobs[2].data());
    grads.get_mut(slot::HEAD3_W).copy_from_slice(&dw);
    grads.get_mut(slot::HEAD3_B)[0] = db;
    relu_backward(&cache.z4, &mut da4);
    let (d_in, dw, db) = conv3x3_backward(&cache.dec2_in, params.get(slot::DEC2_W), &da4, 1, true);
    grads.get_mut(slot::DEC2_W).copy_from_slice(&dw);
    grads.get_mut(slot::DEC2_B).copy_from_slice(&db);
    let (d_up_a3, d_up_p2) = d_in.expect("requested").split(c);
    let mut da3 = upsample2_backward(&d_up_a3);
    let mut dp2 = upsample2_backward(&d_up_p2);
    for (a, b) in dp2.data.iter_mut().zip(dprobs[1].data()) {
        *a += b;
    }

    // Half-resolution head and first decoder stage.
    let (da3_head, dw, db) = head_backward(&cache.a3, params.get(slot::HEAD2_W), &cache.probs[1], &dp2.data);
    grads.get_mut(slot::HEAD2_W).copy_from_slice(&dw);
    grads.get_mut(slot::HEAD2_B)[0] = db;
    da3.add_assign(&da3_head);
    relu_backward(&cache.z3, &mut da3);
    let (d_in, dw, db) = conv3x3_backward(&cache.dec1_in, params.get(slot::DEC1_W), &da3, 1, true);
    grads.get_mut(slot::DEC1_W).copy_from_slice(&dw);
    grads.get_mut(slot::DEC1_B).copy_from_slice(&db);
    let (d_fused, d_up_p1) = d_in.expect("requested").split(c);
    let mut dp1 = upsample2_backward(&d_up_p1);
    for (a, b) in dp1.data.iter_mut().zip(dprobs[0].data()) {
        *a += b;
    }

    // Fusion.
    let (mut da1, mut da2) = if let Some(sa) = &cache.sa {
        let (df, dc, gg) = scale_attention_backward(&cache.pyramid, gates(params), sa, &d_fused);
        for (b, g) in gg.iter().enumerate() {
            let base = slot::SA_BASE + 4 * b;
            grads.get_mut(base).copy_from_slice(&g.w1);
            grads.get_mut(base + 1).copy_from_slice(&g.b1);
            grads.get_mut(base + 2).copy_from_slice(&g.w2);
            grads.get_mut(base + 3).copy_from_slice(&g.b2);
        }
        (df, dc)
    } else {
        let mut half = d_fused.clone();
        half.data.iter_mut().for_each(|v| *v *= 0.5);
        let dc = upsample2_backward(&half);
        (half, dc)
    };

    // Coarse head and encoder.
    let (da2_head, dw, db) = head_backward(
        &cache.pyramid.coarse,
        params.get(slot::HEAD1_W),
        &cache.probs[0],
        &dp1.data,
    );
    grads.get_mut(slot::HEAD1_W).copy_from_slice(&dw);
    grads.get_mut(slot::HEAD1_B)[0] = db;
    da2.add_assign(&da2_head);
    relu_backward(&cache.z2, &mut da2);
    let (d_a1, dw, db) = conv3x3_backward(&cache.pyramid.fine, params.get(slot::ENC2_W), &da2, 2, true);
    grads.get_mut(slot::ENC2_W).copy_from_slice(&dw);
    grads.get_mut(slot::ENC2_B).copy_from_slice(&db);
    da1.add_assign(&d_a1.expect("requested"));
    relu_backward(&cache.z1, &mut da1);
    let (_, dw, db) = conv3x3_backward(&cache.input, params.get(slot::ENC1_W), &da1, 2, false);
    grads.get_mut(slot::ENC1_W).copy_from_slice(&dw);
    grads.get_mut(slot::ENC1_B).copy_from_slice(&db);
    Ok(grads)
}
