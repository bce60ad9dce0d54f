use crate::error::{Error, Result};

/// Row-major 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Normalized intensities in `[0, 1]`.
pub type GrayImage = Grid<f64>;
/// Per-pixel foreground probabilities.
pub type ProbMap = Grid<f64>;
/// Signed level set values.
pub type LevelSetField = Grid<f64>;
pub type BinaryMask = Grid<bool>;
pub type TriMask = Grid<Label>;

/// Pseudo-mask label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Label {
    #[default]
    Background,
    Foreground,
    Ignore,
}

impl Label {
    /// Target value for the losses; `None` for ignored pixels.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Background => Some(0.0),
            Label::Foreground => Some(1.0),
            Label::Ignore => None,
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims {
                width,
                height,
                msg: "dimensions must be at least 1".into(),
            });
        }
        if data.len() != width * height {
            return Err(Error::InvalidDims {
                width,
                height,
                msg: format!("data length {} != width*height", data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be >= 1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, v: T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be >= 1");
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }
}

impl Grid<f64> {
    /// Builds an intensity image, rejecting values outside `[0, 1]`.
    pub fn from_intensities(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDims {
                width,
                height,
                msg: format!("intensity {v} outside [0,1]"),
            });
        }
        Self::from_vec(width, height, data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        self.map(|&v| v >= t)
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `true` if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> BinaryMask {
        self.map(|&b| !b)
    }

    pub fn to_trimask(&self) -> TriMask {
        self.map(|&b| if b { Label::Foreground } else { Label::Background })
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }
}

impl Grid<Label> {
    pub fn count_label(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    pub fn foreground(&self) -> BinaryMask {
        self.map(|&l| l == Label::Foreground)
    }
}
