use super::raster::{GrayImage, Grid};
use crate::error::{Error, Result};

/// `p' = L p + t`, with `L = [[m[0], m[1]], [m[3], m[4]]]` and `t = (m[2], m[5])`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub m: [f64; 6],
}

impl AffineTransform {
    pub const IDENTITY: Self = Self {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn new(m: [f64; 6]) -> Self {
        Self { m }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Self::new([sx, 0.0, 0.0, 0.0, sy, 0.0])
    }

    /// Counter-clockwise in the image frame (x right, y down renders clockwise).
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new([c, -s, 0.0, s, c, 0.0])
    }

    /// Rotation by `theta` and uniform scale `s` about `(cx, cy)`.
    pub fn rotate_scale_about(theta: f64, s: f64, cx: f64, cy: f64) -> Self {
        Self::translation(cx, cy)
            .compose(&Self::rotation(theta))
            .compose(&Self::scale(s, s))
            .compose(&Self::translation(-cx, -cy))
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.m;
        let b = &other.m;
        Self::new([
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        ])
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(Error::SingularTransform(det));
        }
        let [a, b, tx, c, d, ty] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Self::new([ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)]))
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Bilinear sample at continuous point `(px, py)`; edges clamp.
fn bilinear_at(img: &GrayImage, px: f64, py: f64) -> f64 {
    let (w, h) = img.dims();
    let sx = (px - 0.5).clamp(0.0, (w - 1) as f64);
    let sy = (py - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let d = img.data();
    let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
    let bot = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

fn check_target(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDims {
            width,
            height,
            msg: "target dimensions must be at least 1".into(),
        });
    }
    Ok(())
}

/// Nearest-neighbour resize for any label type: output pixel `x` takes source
/// column `floor((x + 0.5) * src_w / dst_w)`.
pub fn resample_nearest<T: Copy>(grid: &Grid<T>, width: usize, height: usize) -> Result<Grid<T>> {
    check_target(width, height)?;
    let (sw, sh) = grid.dims();
    let cols: Vec<usize> = (0..width)
        .map(|x| (((x as f64 + 0.5) * sw as f64 / width as f64).floor() as usize).min(sw - 1))
        .collect();
    Ok(Grid::from_fn(width, height, |x, y| {
        let sy = (((y as f64 + 0.5) * sh as f64 / height as f64).floor() as usize).min(sh - 1);
        *grid.get(cols[x], sy)
    }))
}

/// Resizes an intensity image; pixel centers are aligned between grids.
pub fn resample(image: &GrayImage, target: (usize, usize), method: Interp) -> Result<GrayImage> {
    let (width, height) = target;
    check_target(width, height)?;
    if image.dims() == target {
        return Ok(image.clone());
    }
    match method {
        Interp::Nearest => resample_nearest(image, width, height),
        Interp::Bilinear => {
            let kx = image.width() as f64 / width as f64;
            let ky = image.height() as f64 / height as f64;
            Ok(GrayImage::from_fn(width, height, |x, y| {
                bilinear_at(image, (x as f64 + 0.5) * kx, (y as f64 + 0.5) * ky)
            }))
        }
    }
}

/// Warps `image` forward through `t`: output pixel center `q` takes the
/// bilinear sample at `t⁻¹(q)`, or `fill` when that lands outside the source.
pub fn apply_affine(image: &GrayImage, t: &AffineTransform, out_dims: (usize, usize), fill: f64) -> Result<GrayImage> {
    check_target(out_dims.0, out_dims.1)?;
    let inv = t.inverse()?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    Ok(GrayImage::from_fn(out_dims.0, out_dims.1, |x, y| {
        let (px, py) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
        if px < 0.0 || py < 0.0 || px > w || py > h {
            fill
        } else {
            bilinear_at(image, px, py)
        }
    }))
}

/// Label-preserving counterpart of [`apply_affine`].
pub fn warp_nearest<T: Copy>(
    grid: &Grid<T>,
    t: &AffineTransform,
    out_dims: (usize, usize),
    fill: T,
) -> Result<Grid<T>> {
    check_target(out_dims.0, out_dims.1)?;
    let inv = t.inverse()?;
    let (w, h) = grid.dims();
    Ok(Grid::from_fn(out_dims.0, out_dims.1, |x, y| {
        let (px, py) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
        if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
            fill
        } else {
            *grid.get(px.floor() as usize, py.floor() as usize)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn img(w: usize, h: usize, v: &[f64]) -> GrayImage {
        GrayImage::from_vec(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn same_dims_is_identity() {
        let a = img(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(resample(&a, (3, 2), Interp::Nearest).unwrap(), a);
        assert_eq!(resample(&a, (3, 2), Interp::Bilinear).unwrap(), a);
    }

    #[test]
    fn constant_field_any_target() {
        let a = img(1, 1, &[0.37]);
        for m in [Interp::Nearest, Interp::Bilinear] {
            let r = resample(&a, (5, 3), m).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn zero_target_rejected() {
        let a = img(1, 1, &[0.0]);
        assert!(resample(&a, (0, 3), Interp::Bilinear).is_err());
    }

    #[test]
    fn bilinear_upsample_row_is_monotone() {
        let a = img(2, 1, &[0.0, 1.0]);
        let r = resample(&a, (4, 1), Interp::Bilinear).unwrap();
        // Brute force: source coordinate (x + 0.5) / 2 - 0.5, clamped, linear between 0 and 1.
        let expect: Vec<f64> = (0..4).map(|x| ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0)).collect();
        assert_eq!(r.data(), expect.as_slice());
        assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identity_affine() {
        let a = img(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let r = apply_affine(&a, &AffineTransform::IDENTITY, (3, 2), 0.0).unwrap();
        assert_eq!(r, a);
    }

    #[test]
    fn quarter_turn_permutes_pixels() {
        // a b      c a
        // c d  ->  d b   (rotation by +90° about the center in a y-down frame)
        let a = img(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let t = AffineTransform::rotate_scale_about(FRAC_PI_2, 1.0, 1.0, 1.0);
        let r = apply_affine(&a, &t, (2, 2), 0.0).unwrap();
        // Index oracle: output (x, y) comes from source (y, 1 - x).
        for y in 0..2 {
            for x in 0..2 {
                let src = *a.get(y, 1 - x);
                assert!((r.get(x, y) - src).abs() < 1e-12, "({x},{y})");
            }
        }
        assert!((r.data()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn full_translation_fills() {
        let a = img(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let t = AffineTransform::translation(3.0, 0.0);
        let r = apply_affine(&a, &t, (3, 2), 0.0).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_rejected() {
        let a = img(1, 1, &[0.0]);
        let t = AffineTransform::scale(1.0, 0.0);
        assert!(matches!(
            apply_affine(&a, &t, (1, 1), 0.0),
            Err(Error::SingularTransform(_))
        ));
    }

    proptest! {
        #[test]
        fn nearest_commutes_with_monotone_maps(
            vals in proptest::collection::vec(0.0f64..1.0, 12),
            tw in 1usize..9, th in 1usize..9,
        ) {
            let a = img(4, 3, &vals);
            let f = |v: f64| v * v;
            let lhs = resample(&a.map(|&v| f(v)), (tw, th), Interp::Nearest).unwrap();
            let rhs = resample(&a, (tw, th), Interp::Nearest).unwrap().map(|&v| f(v));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn resample_value_ranges(
            vals in proptest::collection::vec(0.0f64..1.0, 12),
            tw in 1usize..9, th in 1usize..9,
        ) {
            let a = img(4, 3, &vals);
            let (lo, hi) = a.min_max();
            let b = resample(&a, (tw, th), Interp::Bilinear).unwrap();
            prop_assert!(b.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            let n = resample(&a, (tw, th), Interp::Nearest).unwrap();
            prop_assert!(n.data().iter().all(|v| vals.contains(v)));
        }

        #[test]
        fn affine_roundtrip_interior(theta in -0.6f64..0.6, s in 0.8f64..1.25,
                                     fx in 0.02f64..0.08, fy in 0.02f64..0.08) {
            let (w, h) = (32usize, 32usize);
            let a = GrayImage::from_fn(w, h, |x, y| {
                0.5 + 0.2 * ((x as f64) * fx).sin() + 0.2 * ((y as f64) * fy).cos()
            });
            let t = AffineTransform::rotate_scale_about(theta, s, 16.0, 16.0);
            let fwd = apply_affine(&a, &t, (w, h), 0.0).unwrap();
            let back = apply_affine(&fwd, &t.inverse().unwrap(), (w, h), 0.0).unwrap();
            for y in 10..22 {
                for x in 10..22 {
                    prop_assert!((a.get(x, y) - back.get(x, y)).abs() <= 2.0 / 255.0);
                }
            }
        }
    }
}
