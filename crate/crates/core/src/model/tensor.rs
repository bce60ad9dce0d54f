//! Channel-major feature maps and the handful of layers the segmenter needs,
//! each with its hand-written adjoint.

use crate::error::{Error, Result};

/// `c × h × w`, row-major within each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::InvalidDims {
                width: w,
                height: h,
                msg: format!("tensor data length {} != {c}*{h}*{w}", data.len()),
            });
        }
        Ok(Self { c, h, w, data })
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.plane();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.plane();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks channels of `a` then `b`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial mismatch");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Inverse of [`Tensor::concat`]: first `k` channels, then the rest.
    pub fn split(&self, k: usize) -> (Tensor, Tensor) {
        let n = k * self.plane();
        (
            Tensor {
                c: k,
                h: self.h,
                w: self.w,
                data: self.data[..n].to_vec(),
            },
            Tensor {
                c: self.c - k,
                h: self.h,
                w: self.w,
                data: self.data[n..].to_vec(),
            },
        )
    }
}

/// 3×3 convolution, zero padding 1, given stride. Weights are `[out][in][3][3]`.
pub fn conv3x3(input: &Tensor, weight: &[f64], bias: &[f64], stride: usize) -> Tensor {
    let out_c = bias.len();
    let in_c = input.c;
    debug_assert_eq!(weight.len(), out_c * in_c * 9);
    let (h, w) = (input.h, input.w);
    let oh = h.div_ceil(stride);
    let ow = w.div_ceil(stride);
    let mut out = Tensor::zeros(out_c, oh, ow);
    for o in 0..out_c {
        let dst = out.channel_mut(o);
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = input.channel(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((o * in_c + i) * 3 + ky) * 3 + kx];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let (x0, x1) = valid_cols(kx, w);
                            let s = &srow[x0 + kx - 1..];
                            for (d, &sv) in drow[x0..x1].iter_mut().zip(&s[..x1 - x0]) {
                                *d += wv * sv;
                            }
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    *d += wv * srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output columns `[x0, x1)` whose tap `kx` lands inside a row of width `w`
/// (stride 1); the matching source column of `x0` is `x0 + kx - 1`.
#[inline]
fn valid_cols(kx: usize, w: usize) -> (usize, usize) {
    let x0 = if kx == 0 { 1 } else { 0 };
    let x1 = if kx == 2 { w - 1 } else { w };
    (x0.min(x1), x1)
}

/// Adjoint of [`conv3x3`]: returns `(d_input, d_weight, d_bias)`.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    dout: &Tensor,
    stride: usize,
    need_dinput: bool,
) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
    let out_c = dout.c;
    let in_c = input.c;
    let (h, w) = (input.h, input.w);
    let (oh, ow) = (dout.h, dout.w);
    let mut dw = vec![0.0; weight.len()];
    let db: Vec<f64> = (0..out_c).map(|o| dout.channel(o).iter().sum()).collect();
    let mut din = need_dinput.then(|| Tensor::zeros(in_c, h, w));
    for o in 0..out_c {
        let g = dout.channel(o);
        for i in 0..in_c {
            let src = input.channel(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let (x0, x1) = valid_cols(kx, w);
                            let sx0 = x0 + kx - 1;
                            let srow = &src[iy * w + sx0..iy * w + sx0 + (x1 - x0)];
                            acc += grow[x0..x1].iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(din) = din.as_mut() {
                                let drow = &mut din.channel_mut(i)[iy * w + sx0..iy * w + sx0 + (x1 - x0)];
                                for (d, &gv) in drow.iter_mut().zip(&grow[x0..x1]) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    acc += gv * src[iy * w + ix as usize];
                                    if let Some(din) = din.as_mut() {
                                        din.channel_mut(i)[iy * w + ix as usize] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (din, dw, db)
}

pub fn relu(t: &Tensor) -> Tensor {
    Tensor {
        data: t.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*t
    }
}

/// Gradient through `relu` given the pre-activation.
pub fn relu_backward(pre: &Tensor, dout: &mut Tensor) {
    for (d, &z) in dout.data.iter_mut().zip(&pre.data) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Nearest ×2 upsampling.
pub fn upsample2(t: &Tensor) -> Tensor {
    let (h2, w2) = (t.h * 2, t.w * 2);
    let mut out = Tensor::zeros(t.c, h2, w2);
    for k in 0..t.c {
        let src = t.channel(k);
        let dst = out.channel_mut(k);
        for y in 0..h2 {
            let srow = &src[(y / 2) * t.w..(y / 2 + 1) * t.w];
            for (x, d) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                *d = srow[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub fn upsample2_backward(d: &Tensor) -> Tensor {
    let (h, w) = (d.h / 2, d.w / 2);
    let mut out = Tensor::zeros(d.c, h, w);
    for k in 0..d.c {
        let src = d.channel(k);
        let dst = out.channel_mut(k);
        for y in 0..d.h {
            for x in 0..d.w {
                dst[(y / 2) * w + x / 2] += src[y * d.w + x];
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// 1×1 projection to one channel followed by the logistic function.
pub fn head(features: &Tensor, weight: &[f64], bias: f64) -> Tensor {
    let mut logit = vec![bias; features.plane()];
    for (k, &wk) in weight.iter().enumerate() {
        for (l, &f) in logit.iter_mut().zip(features.channel(k)) {
            *l += wk * f;
        }
    }
    Tensor {
        c: 1,
        h: features.h,
        w: features.w,
        data: logit.into_iter().map(sigmoid).collect(),
    }
}

/// Adjoint of [`head`] given its output `p` and `dL/dp`.
/// Returns `(d_features, d_weight, d_bias)`.
pub fn head_backward(features: &Tensor, weight: &[f64], p: &Tensor, dp: &[f64]) -> (Tensor, Vec<f64>, f64) {
    let dlogit: Vec<f64> = p.data.iter().zip(dp).map(|(&pv, &g)| g * pv * (1.0 - pv)).collect();
    let mut dfeat = Tensor::zeros(features.c, features.h, features.w);
    let mut dw = vec![0.0; weight.len()];
    for (k, &wk) in weight.iter().enumerate() {
        dw[k] = features.channel(k).iter().zip(&dlogit).map(|(a, b)| a * b).sum();
        for (d, &g) in dfeat.channel_mut(k).iter_mut().zip(&dlogit) {
            *d = wk * g;
        }
    }
    (dfeat, dw, dlogit.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct definition: out[o][y][x] = b[o] + Σ w·in at (y*s+ky-1, x*s+kx-1).
    fn conv_oracle(input: &Tensor, weight: &[f64], bias: &[f64], stride: usize) -> Tensor {
        let oh = input.h.div_ceil(stride);
        let ow = input.w.div_ceil(stride);
        let mut out = Tensor::zeros(bias.len(), oh, ow);
        for o in 0..bias.len() {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = bias[o];
                    for i in 0..input.c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (y * stride + ky) as isize - 1;
                                let ix = (x * stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < input.h && (ix as usize) < input.w {
                                    s += weight[((o * input.c + i) * 3 + ky) * 3 + kx]
                                        * input.channel(i)[iy as usize * input.w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * oh + y) * ow + x] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let x = rand_tensor(&mut rng, 3, 6, 8);
            let w: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = vec![0.1, -0.2];
            let a = conv3x3(&x, &w, &b, stride);
            let o = conv_oracle(&x, &w, &b, stride);
            for (p, q) in a.data.iter().zip(&o.data) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for stride in [1, 2] {
            let x = rand_tensor(&mut rng, 2, 6, 6);
            let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = vec![0.0; 3];
            let probe = rand_tensor(&mut rng, 3, 6usize.div_ceil(stride), 6usize.div_ceil(stride));
            let loss = |x: &Tensor, w: &[f64], b: &[f64]| -> f64 {
                conv3x3(x, w, b, stride)
                    .data
                    .iter()
                    .zip(&probe.data)
                    .map(|(a, p)| a * p)
                    .sum()
            };
            let (dx, dw, db) = conv3x3_backward(&x, &w, &probe, stride, true);
            let dx = dx.unwrap();
            let ex = finite_diff_check(
                |v| loss(&Tensor::from_vec(2, 6, 6, v.to_vec()).unwrap(), &w, &b),
                &x.data,
                &dx.data,
                1e-5,
            );
            let ew = finite_diff_check(|v| loss(&x, v, &b), &w, &dw, 1e-5);
            let eb = finite_diff_check(|v| loss(&x, &w, v), &b, &db, 1e-5);
            assert!(ex < 1e-6 && ew < 1e-6 && eb < 1e-6, "{ex} {ew} {eb}");
        }
    }

    #[test]
    fn upsample_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, 2, 3, 4);
        let b = rand_tensor(&mut rng, 2, 6, 8);
        let lhs: f64 = upsample2(&a).data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
        let rhs: f64 = a
            .data
            .iter()
            .zip(&upsample2_backward(&b).data)
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = rand_tensor(&mut rng, 3, 4, 4);
        let w = vec![0.3, -0.7, 0.2];
        let probe: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |f: &Tensor, w: &[f64]| -> f64 { head(f, w, 0.1).data.iter().zip(&probe).map(|(a, b)| a * b).sum() };
        let p = head(&f, &w, 0.1);
        let (df, dw, _) = head_backward(&f, &w, &p, &probe);
        let ef = finite_diff_check(
            |v| loss(&Tensor::from_vec(3, 4, 4, v.to_vec()).unwrap(), &w),
            &f.data,
            &df.data,
            1e-5,
        );
        let ew = finite_diff_check(|v| loss(&f, v), &w, &dw, 1e-5);
        assert!(ef < 1e-6 && ew < 1e-6);
    }
}
