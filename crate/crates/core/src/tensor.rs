//! Dense 4-D tensors in (batch, channel, row, col) order.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Shape of a [`Tensor4`]: batch, channels, rows, cols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidShape(format!(
                "all dimensions must be >= 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape4 { n, c, h, w }
    }
}

/// Initializer accepted by [`Tensor4::create`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Normal { mean: f64, std: f64, seed: u64 },
    Uniform { lo: f64, hi: f64, seed: u64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4{} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

impl Tensor4 {
    pub fn create(shape: impl Into<Shape4>, init: Init) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        let len = shape.len();
        let data = match init {
            Init::Zeros => vec![0.0; len],
            Init::Constant(v) => vec![v; len],
            Init::Normal { mean, std, seed } => {
                if !(std >= 0.0) {
                    return Err(Error::Contract(format!("normal std must be >= 0, got {std}")));
                }
                let dist = Normal::new(mean, std).map_err(|e| {
                    Error::Contract(format!("normal({mean}, {std}): {e}"))
                })?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::Uniform { lo, hi, seed } => {
                if !(lo <= hi) {
                    return Err(Error::Contract(format!("uniform bounds {lo} > {hi}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
            }
        };
        Ok(Tensor4 { shape, data })
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Zero tensor; panics on a zero-sized dimension. Internal shapes are
    /// always derived from validated tensors.
    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::create(shape, Init::Zeros).expect("zeros: invalid shape")
    }

    pub fn full(shape: impl Into<Shape4>, v: f64) -> Self {
        Self::create(shape, Init::Constant(v)).expect("full: invalid shape")
    }

    pub fn scalar(v: f64) -> Self {
        Tensor4 {
            shape: Shape4::new(1, 1, 1, 1),
            data: vec![v],
        }
    }

    pub fn randn(shape: impl Into<Shape4>, mean: f64, std: f64, seed: u64) -> Self {
        Self::create(shape, Init::Normal { mean, std, seed }).expect("randn: invalid arguments")
    }

    pub fn rand_uniform(shape: impl Into<Shape4>, lo: f64, hi: f64, seed: u64) -> Self {
        Self::create(shape, Init::Uniform { lo, hi, seed }).expect("rand_uniform: invalid arguments")
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.index(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous (h, w) plane for batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let off = (n * self.shape.c + c) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let off = (n * self.shape.c + c) * p;
        &mut self.data[off..off + p]
    }

    /// Scalar value of a (1,1,1,1) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar tensor, got {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// In-place `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{what}: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Copy of one batch entry as an n=1 tensor.
    pub fn batch_item(&self, n: usize) -> Self {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor4 {
            shape: Shape4::new(1, s.c, s.h, s.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks tensors of identical (c,h,w) along the batch axis.
    pub fn stack(items: &[&Tensor4]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(Error::Shape(format!("stack: {} vs {}", ts, s)));
            }
            data.extend_from_slice(&t.data);
            n += ts.n;
        }
        Ok(Tensor4 {
            shape: Shape4::new(n, s.c, s.h, s.w),
            data,
        })
    }

    /// Crop the spatial window `[y0, y0+h) x [x0, x0+w)` from every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || y0 + h > s.h || x0 + w > s.w {
            return Err(Error::Contract(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}",
                s
            )));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in self.data.chunks_exact(s.plane()) {
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * s.w + x0..y * s.w + x0 + w]);
            }
        }
        Ok(Tensor4 {
            shape: Shape4::new(s.n, s.c, h, w),
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor4::create((1, 1, 2, 2), Init::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor4::create((1, 1, 1, 1), Init::Constant(3.5)).unwrap();
        assert_eq!(c.data(), &[3.5]);
    }

    #[test]
    fn seeded_normal_is_deterministic() {
        let init = Init::Normal {
            mean: 0.0,
            std: 1.0,
            seed: 7,
        };
        let a = Tensor4::create((1, 2, 3, 3), init).unwrap();
        let b = Tensor4::create((1, 2, 3, 3), init).unwrap();
        assert_eq!(a.data(), b.data());
        let c = Tensor4::randn((1, 2, 3, 3), 0.0, 1.0, 8);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn zero_sized_dimension_rejected() {
        assert!(matches!(
            Tensor4::create((1, 0, 2, 2), Init::Zeros),
            Err(Error::InvalidShape(_))
        ));
        assert!(Tensor4::from_vec((1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn negative_std_rejected() {
        let r = Tensor4::create(
            (1, 1, 1, 1),
            Init::Normal {
                mean: 0.0,
                std: -1.0,
                seed: 0,
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn crop_and_stack() {
        let t = Tensor4::from_vec((1, 1, 3, 3), (0..9).map(f64::from).collect()).unwrap();
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0]);
        let s = Tensor4::stack(&[&c, &c]).unwrap();
        assert_eq!(s.shape(), Shape4::new(2, 1, 2, 2));
        assert_eq!(s.batch_item(1), c);
        assert!(t.crop(2, 2, 2, 2).is_err());
    }
}
