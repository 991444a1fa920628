//! Dense row-major tensor used throughout the crate.
//!
//! Shapes follow the `[C, H, W]` convention for feature maps, `[2, H, W]` for
//! flow fields, `[Cout, Cin, kh, kw]` for conv weights and `[N]` for vectors.

use crate::{Error, Result, Scalar};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::of(rng.gen_range(lo..hi)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Gaussian samples via Box-Muller, `std` scaled.
    pub fn rand_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            data.push(T::of(r * c * std));
            if data.len() < numel {
                data.push(T::of(r * s * std));
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(channels, height, width)` of a 3-d tensor.
    #[inline]
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected 3-d tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: T) {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            T::zero()
        } else {
            self.sum() / T::of(self.data.len() as f64)
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn abs_max(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Widen/narrow to a different scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Concatenate 3-d tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        assert!(!parts.is_empty());
        let (_, h, w) = parts[0].dims3();
        let mut channels = 0;
        for p in parts {
            let (c, ph, pw) = p.dims3();
            if (ph, pw) != (h, w) {
                return Err(Error::dim("concat_channels", parts[0].shape(), p.shape()));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Ok(Self {
            shape: vec![channels, h, w],
            data,
        })
    }

    /// Spatial crop of a 3-d tensor.
    pub fn crop_spatial(&self, y0: usize, x0: usize, out_h: usize, out_w: usize) -> Self {
        let (c, h, w) = self.dims3();
        assert!(y0 + out_h <= h && x0 + out_w <= w);
        let mut out = Self::zeros(&[c, out_h, out_w]);
        for ci in 0..c {
            for y in 0..out_h {
                for x in 0..out_w {
                    out.set3(ci, y, x, self.at3(ci, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    /// Copy of channels `[lo, hi)` of a 3-d tensor.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Self {
        let (c, h, w) = self.dims3();
        assert!(lo < hi && hi <= c);
        Self {
            shape: vec![hi - lo, h, w],
            data: self.data[lo * h * w..hi * h * w].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn chw_indexing_is_row_major() {
        let t = Tensor::<f64>::new(&[2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 1, 2), 5.0);
        assert_eq!(t.at3(1, 0, 1), 7.0);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = Tensor::<f32>::full(&[2, 2, 2], 1.0);
        let b = Tensor::<f32>::full(&[1, 2, 2], 2.0);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 2, 2]);
        assert_eq!(c.slice_channels(0, 2), a);
        assert_eq!(c.slice_channels(2, 3), b);
    }

    #[test]
    fn concat_rejects_mismatched_spatial() {
        let a = Tensor::<f32>::zeros(&[1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 3, 2]);
        assert!(Tensor::concat_channels(&[&a, &b]).is_err());
    }
}
