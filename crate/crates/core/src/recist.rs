//! RECIST annotation geometry.
//!
//! A RECIST measurement is a long diameter plus a roughly perpendicular short
//! diameter. The pseudo mask is the ellipse spanned by the two diameters, and
//! the constrained region used by the regional level set loss is the same
//! ellipse with both semi-axes doubled, i.e. four times the area, so it scales
//! with the lesion.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{AffineTransform, BinaryMask};

pub type Point = (f64, f64);

/// Largest |cos| between the two diameters before the annotation is rejected.
pub const MAX_AXIS_COSINE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecistAnnotation {
    pub long_axis: (Point, Point),
    pub short_axis: (Point, Point),
}

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

impl RecistAnnotation {
    pub fn new(long_axis: (Point, Point), short_axis: (Point, Point)) -> Self {
        Self { long_axis, short_axis }
    }

    /// From the flat `x1,y1,...,x4,y4` layout used by the annotation CSV.
    pub fn from_coords(c: [f64; 8]) -> Self {
        Self::new(((c[0], c[1]), (c[2], c[3])), ((c[4], c[5]), (c[6], c[7])))
    }

    pub fn coords(&self) -> [f64; 8] {
        let ((a, b), (c, d)) = (self.long_axis, self.short_axis);
        [a.0, a.1, b.0, b.1, c.0, c.1, d.0, d.1]
    }

    pub fn long_length(&self) -> f64 {
        dist(self.long_axis.0, self.long_axis.1)
    }

    pub fn short_length(&self) -> f64 {
        dist(self.short_axis.0, self.short_axis.1)
    }

    pub fn endpoints(&self) -> [Point; 4] {
        [self.long_axis.0, self.long_axis.1, self.short_axis.0, self.short_axis.1]
    }

    pub fn validate(&self) -> Result<()> {
        let (l, s) = (self.long_length(), self.short_length());
        if !(l > 1e-9) || !(s > 1e-9) {
            return Err(Error::DegenerateAnnotation(format!(
                "zero-length axis (long {l}, short {s})"
            )));
        }
        if l < s {
            return Err(Error::InvalidAnnotation(format!(
                "long axis {l} shorter than short axis {s}"
            )));
        }
        let ((a, b), (c, d)) = (self.long_axis, self.short_axis);
        let cos = ((b.0 - a.0) * (d.0 - c.0) + (b.1 - a.1) * (d.1 - c.1)) / (l * s);
        if cos.abs() > MAX_AXIS_COSINE {
            return Err(Error::InvalidAnnotation(format!(
                "axes not perpendicular (|cos| = {:.3})",
                cos.abs()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-major axis, pixels.
    pub a: f64,
    /// Semi-minor axis, pixels.
    pub b: f64,
    /// Direction of the major axis in `[0, π)`.
    pub theta: f64,
}

impl Ellipse {
    pub fn scaled_axes(&self, k: f64) -> Ellipse {
        Ellipse {
            a: self.a * k,
            b: self.b * k,
            ..*self
        }
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    #[inline]
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (u, v) = (px - self.cx, py - self.cy);
        let r = (u * c + v * s) / self.a;
        let t = (-u * s + v * c) / self.b;
        r * r + t * t <= 1.0
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }
}

/// Canonical angle in `[0, π)`.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Ellipse spanned by the two diameters; centered on the mean of the four endpoints.
pub fn fit_ellipse(ann: &RecistAnnotation) -> Result<Ellipse> {
    ann.validate()?;
    let pts = ann.endpoints();
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let (p, q) = ann.long_axis;
    Ok(Ellipse {
        cx,
        cy,
        a: ann.long_length() / 2.0,
        b: ann.short_length() / 2.0,
        theta: wrap_half_turn((q.1 - p.1).atan2(q.0 - p.0)),
    })
}

/// Point-inclusion rasterization at pixel centers.
pub fn rasterize_ellipse(e: &Ellipse, dims: (usize, usize)) -> BinaryMask {
    let (w, h) = dims;
    let mut mask = BinaryMask::filled(w, h, false);
    let (x0, y0, x1, y1) = e.bbox();
    let lo = |v: f64, n: usize| ((v - 0.5).floor().max(0.0) as usize).min(n);
    let hi = |v: f64, n: usize| ((v - 0.5).ceil().max(-1.0) + 1.0).clamp(0.0, n as f64) as usize;
    for y in lo(y0, h)..hi(y1, h) {
        for x in lo(x0, w)..hi(x1, w) {
            if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Semi-axis factor for the constrained region (area factor = square of this).
pub const REGION_AXIS_SCALE: f64 = 2.0;

/// Lesion-adaptive region: the ellipse with both semi-axes doubled, clipped to the grid.
pub fn constrained_region(e: &Ellipse, dims: (usize, usize)) -> BinaryMask {
    rasterize_ellipse(&e.scaled_axes(REGION_AXIS_SCALE), dims)
}

/// Maps every endpoint through `t`; the longer mapped diameter becomes the long axis.
pub fn transform_annotation(ann: &RecistAnnotation, t: &AffineTransform) -> Result<RecistAnnotation> {
    t.inverse()?;
    let map = |(p, q): (Point, Point)| (t.apply(p.0, p.1), t.apply(q.0, q.1));
    let mut out = RecistAnnotation::new(map(ann.long_axis), map(ann.short_axis));
    if out.long_length() < out.short_length() {
        std::mem::swap(&mut out.long_axis, &mut out.short_axis);
    }
    if !(out.short_length() > 1e-9) {
        return Err(Error::DegenerateAnnotation("transform collapses an axis".into()));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    image_id: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    x3: f64,
    y3: f64,
    x4: f64,
    y4: f64,
}

/// Reads `image_id,x1,y1,x2,y2,x3,y3,x4,y4` rows (long axis first).
pub fn read_annotations_csv(path: impl AsRef<Path>) -> Result<Vec<(String, RecistAnnotation)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: CsvRow = row?;
        let ann = RecistAnnotation::from_coords([r.x1, r.y1, r.x2, r.y2, r.x3, r.y3, r.x4, r.y4]);
        out.push((r.image_id, ann));
    }
    Ok(out)
}

pub fn write_annotations_csv(path: impl AsRef<Path>, rows: &[(String, RecistAnnotation)]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for (id, ann) in rows {
        let c = ann.coords();
        wtr.serialize(CsvRow {
            image_id: id.clone(),
            x1: c[0],
            y1: c[1],
            x2: c[2],
            y2: c[3],
            x3: c[4],
            y3: c[5],
            x4: c[6],
            y4: c[7],
        })?;
    }
    wtr.flush()?;
    Ok(())
}
