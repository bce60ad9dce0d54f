//! Scale attention over a two-level feature pyramid.
//!
//! Each scale gets an SE-style branch: global average pool, a squeeze layer
//! with ReLU, an excite layer with a logistic output `a_s` per channel. The
//! branch outputs are normalized across scales (`w_s = a_s / Σ a`) and the
//! fused map is `Σ_s w_s ⊙ F_s`, a per-channel convex combination.

use super::tensor::{sigmoid, upsample2, upsample2_backward, Tensor};
use crate::error::{Error, Result};

/// Encoder features: `fine` at 1/2 input resolution, `coarse` at 1/4.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub fine: Tensor,
    pub coarse: Tensor,
}

/// One SE branch: `w1` is `hidden × c`, `w2` is `c × hidden`.
#[derive(Clone, Copy, Debug)]
pub struct Gate<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SaCache {
    pub coarse_up: Tensor,
    pub pooled: [Vec<f64>; 2],
    pub pre: [Vec<f64>; 2],
    pub hidden: [Vec<f64>; 2],
    pub attn: [Vec<f64>; 2],
}

fn gap(t: &Tensor) -> Vec<f64> {
    let n = t.plane() as f64;
    (0..t.c).map(|k| t.channel(k).iter().sum::<f64>() / n).collect()
}

fn branch(g: &[f64], gate: &Gate) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = g.len();
    let hd = gate.b1.len();
    let pre: Vec<f64> = (0..hd)
        .map(|j| gate.b1[j] + (0..c).map(|k| gate.w1[j * c + k] * g[k]).sum::<f64>())
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let attn: Vec<f64> = (0..c)
        .map(|k| sigmoid(gate.b2[k] + (0..hd).map(|j| gate.w2[k * hd + j] * hidden[j]).sum::<f64>()))
        .collect();
    (pre, hidden, attn)
}

pub fn scale_attention_fuse(pyramid: &FeaturePyramid, gates: [Gate; 2]) -> Result<(Tensor, SaCache)> {
    let (fine, coarse) = (&pyramid.fine, &pyramid.coarse);
    if fine.c != coarse.c {
        return Err(Error::Config(format!(
            "scale attention channel mismatch: {} vs {}",
            fine.c, coarse.c
        )));
    }
    if (coarse.h * 2, coarse.w * 2) != (fine.h, fine.w) {
        return Err(Error::ShapeMismatch {
            expected: (fine.w, fine.h),
            got: (coarse.w * 2, coarse.h * 2),
        });
    }
    for g in &gates {
        let hd = g.b1.len();
        if g.w1.len() != hd * fine.c || g.w2.len() != fine.c * hd || g.b2.len() != fine.c {
            return Err(Error::Config("scale attention gate shape mismatch".into()));
        }
    }
    let up = upsample2(coarse);
    let pooled = [gap(fine), gap(&up)];
    let (p0, h0, a0) = branch(&pooled[0], &gates[0]);
    let (p1, h1, a1) = branch(&pooled[1], &gates[1]);
    let mut out = Tensor::zeros(fine.c, fine.h, fine.w);
    for k in 0..fine.c {
        let s = a0[k] + a1[k];
        let (w0, w1) = (a0[k] / s, a1[k] / s);
        for ((o, &f), &u) in out.channel_mut(k).iter_mut().zip(fine.channel(k)).zip(up.channel(k)) {
            *o = w0 * f + w1 * u;
        }
    }
    Ok((
        out,
        SaCache {
            coarse_up: up,
            pooled,
            pre: [p0, p1],
            hidden: [h0, h1],
            attn: [a0, a1],
        },
    ))
}

/// Returns `(d_fine, d_coarse, [fine gate grads, coarse gate grads])`;
/// `d_coarse` is at the coarse resolution.
#[allow(clippy::needless_range_loop)] // channel index spans several parallel arrays
pub fn scale_attention_backward(
    pyramid: &FeaturePyramid,
    gates: [Gate; 2],
    cache: &SaCache,
    dout: &Tensor,
) -> (Tensor, Tensor, [GateGrads; 2]) {
    let fine = &pyramid.fine;
    let up = &cache.coarse_up;
    let c = fine.c;
    let n = fine.plane() as f64;
    let feats = [fine, up];
    let mut dfeat = [Tensor::zeros(c, fine.h, fine.w), Tensor::zeros(c, fine.h, fine.w)];
    let mut dattn = [vec![0.0; c], vec![0.0; c]];

    for k in 0..c {
        let (a0, a1) = (cache.attn[0][k], cache.attn[1][k]);
        let s = a0 + a1;
        let w = [a0 / s, a1 / s];
        let d = dout.channel(k);
        let mut dw = [0.0; 2];
        for s_ix in 0..2 {
            dw[s_ix] = d.iter().zip(feats[s_ix].channel(k)).map(|(a, b)| a * b).sum();
            for (df, &g) in dfeat[s_ix].channel_mut(k).iter_mut().zip(d) {
                *df = w[s_ix] * g;
            }
        }
        let s2 = s * s;
        dattn[0][k] = a1 * (dw[0] - dw[1]) / s2;
        dattn[1][k] = a0 * (dw[1] - dw[0]) / s2;
    }

    let mut grads: [GateGrads; 2] = Default::default();
    for s_ix in 0..2 {
        let gate = &gates[s_ix];
        let hd = gate.b1.len();
        let a = &cache.attn[s_ix];
        let dlogit: Vec<f64> = (0..c).map(|k| dattn[s_ix][k] * a[k] * (1.0 - a[k])).collect();
        let hidden = &cache.hidden[s_ix];
        let mut gw2 = vec![0.0; c * hd];
        let mut dhidden = vec![0.0; hd];
        for k in 0..c {
            for j in 0..hd {
                gw2[k * hd + j] = dlogit[k] * hidden[j];
                dhidden[j] += gate.w2[k * hd + j] * dlogit[k];
            }
        }
        let dpre: Vec<f64> = dhidden
            .iter()
            .zip(&cache.pre[s_ix])
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let pooled = &cache.pooled[s_ix];
        let mut gw1 = vec![0.0; hd * c];
        let mut dpool = vec![0.0; c];
        for j in 0..hd {
            for k in 0..c {
                gw1[j * c + k] = dpre[j] * pooled[k];
                dpool[k] += gate.w1[j * c + k] * dpre[j];
            }
        }
        for k in 0..c {
            let add = dpool[k] / n;
            dfeat[s_ix].channel_mut(k).iter_mut().for_each(|v| *v += add);
        }
        grads[s_ix] = GateGrads {
            w1: gw1,
            b1: dpre,
            w2: gw2,
            b2: dlogit,
        };
    }
    let [d_fine, d_up] = dfeat;
    (d_fine, upsample2_backward(&d_up), grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn pyramid(rng: &mut ChaCha8Rng, c: usize) -> FeaturePyramid {
        FeaturePyramid {
            fine: Tensor::from_vec(c, 4, 4, rand_vec(rng, c * 16)).unwrap(),
            coarse: Tensor::from_vec(c, 2, 2, rand_vec(rng, c * 4)).unwrap(),
        }
    }

    #[test]
    fn zero_gates_average_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pyr = pyramid(&mut rng, 3);
        let z = vec![0.0; 6];
        let zc = vec![0.0; 3];
        let zh = vec![0.0; 2];
        let gate = Gate {
            w1: &z,
            b1: &zh,
            w2: &z,
            b2: &zc,
        };
        let (out, cache) = scale_attention_fuse(&pyr, [gate, gate]).unwrap();
        assert!(cache.attn.iter().flatten().all(|&a| a == 0.5));
        let up = upsample2(&pyr.coarse);
        for ((o, f), u) in out.data.iter().zip(&pyr.fine.data).zip(&up.data) {
            assert!((o - 0.5 * (f + u)).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_scales_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coarse = Tensor::from_vec(2, 2, 2, rand_vec(&mut rng, 8)).unwrap();
        let pyr = FeaturePyramid {
            fine: upsample2(&coarse),
            coarse,
        };
        let (w1, b1, w2, b2) = (
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 1),
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 2),
        );
        let (w1b, b1b, w2b, b2b) = (
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 1),
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 2),
        );
        let g0 = Gate {
            w1: &w1,
            b1: &b1,
            w2: &w2,
            b2: &b2,
        };
        let g1 = Gate {
            w1: &w1b,
            b1: &b1b,
            w2: &w2b,
            b2: &b2b,
        };
        let (out, _) = scale_attention_fuse(&pyr, [g0, g1]).unwrap();
        for (o, f) in out.data.iter().zip(&pyr.fine.data) {
            assert!((o - f).abs() < 1e-14);
        }
    }

    #[test]
    fn convex_combination_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pyr = pyramid(&mut rng, 4);
        let (w1, b1, w2, b2) = (
            rand_vec(&mut rng, 8),
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 8),
            rand_vec(&mut rng, 4),
        );
        let g = Gate {
            w1: &w1,
            b1: &b1,
            w2: &w2,
            b2: &b2,
        };
        let (out, _) = scale_attention_fuse(&pyr, [g, g]).unwrap();
        let up = upsample2(&pyr.coarse);
        for ((o, f), u) in out.data.iter().zip(&pyr.fine.data).zip(&up.data) {
            assert!(*o >= f.min(*u) - 1e-15 && *o <= f.max(*u) + 1e-15);
        }
        let bad = FeaturePyramid {
            fine: pyr.fine.clone(),
            coarse: Tensor::zeros(3, 2, 2),
        };
        assert!(scale_attention_fuse(&bad, [g, g]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = 3;
        let hd = 2;
        let pyr = pyramid(&mut rng, c);
        let gp: Vec<Vec<f64>> = [hd * c, hd, c * hd, c, hd * c, hd, c * hd, c]
            .iter()
            .map(|&n| rand_vec(&mut rng, n))
            .collect();
        let probe = rand_vec(&mut rng, c * 16);
        let sizes = [c * 16, c * 4, hd * c, hd, c * hd, c, hd * c, hd, c * hd, c];
        let mut flat: Vec<f64> = pyr.fine.data.clone();
        flat.extend(&pyr.coarse.data);
        for g in &gp {
            flat.extend(g);
        }
        let split = |x: &[f64]| -> Vec<Vec<f64>> {
            let mut off = 0;
            sizes
                .iter()
                .map(|&n| {
                    let v = x[off..off + n].to_vec();
                    off += n;
                    v
                })
                .collect()
        };
        let loss = |x: &[f64]| -> f64 {
            let p = split(x);
            let pyr = FeaturePyramid {
                fine: Tensor::from_vec(c, 4, 4, p[0].clone()).unwrap(),
                coarse: Tensor::from_vec(c, 2, 2, p[1].clone()).unwrap(),
            };
            let g0 = Gate {
                w1: &p[2],
                b1: &p[3],
                w2: &p[4],
                b2: &p[5],
            };
            let g1 = Gate {
                w1: &p[6],
                b1: &p[7],
                w2: &p[8],
                b2: &p[9],
            };
            let (out, _) = scale_attention_fuse(&pyr, [g0, g1]).unwrap();
            out.data.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let g0 = Gate {
            w1: &gp[0],
            b1: &gp[1],
            w2: &gp[2],
            b2: &gp[3],
        };
        let g1 = Gate {
            w1: &gp[4],
            b1: &gp[5],
            w2: &gp[6],
            b2: &gp[7],
        };
        let (_, cache) = scale_attention_fuse(&pyr, [g0, g1]).unwrap();
        let dout = Tensor::from_vec(c, 4, 4, probe.clone()).unwrap();
        let (df, dc, gg) = scale_attention_backward(&pyr, [g0, g1], &cache, &dout);
        let mut analytic = df.data.clone();
        analytic.extend(&dc.data);
        for g in &gg {
            analytic.extend(&g.w1);
            analytic.extend(&g.b1);
            analytic.extend(&g.w2);
            analytic.extend(&g.b2);
        }
        let err = finite_diff_check(loss, &flat, &analytic, 1e-5);
        assert!(err < 1e-3, "{err}");
    }
}
