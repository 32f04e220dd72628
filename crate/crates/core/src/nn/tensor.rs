use crate::error::{Error, Result};

use super::scalar::Scalar;

/// Rank-4 array in `(batch, height, width, channels)` order, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: [usize; 4],
    values: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            values: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            values: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], values: Vec<T>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "dims {:?} need {} values, got {}",
                dims,
                dims.iter().product::<usize>(),
                values.len()
            )));
        }
        let t = Self { dims, values };
        t.ensure_finite("tensor construction")?;
        Ok(t)
    }

    pub(crate) fn from_vec_unchecked(dims: [usize; 4], values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), dims.iter().product::<usize>());
        Self { dims, values }
    }

    /// Stacks equally sized single-channel planes into a `(n, h, w, 1)` batch.
    pub fn from_planes(height: usize, width: usize, planes: &[&[f32]]) -> Result<Self> {
        let mut values = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            if p.len() != height * width {
                return Err(Error::Shape(format!(
                    "plane has {} values, expected {}",
                    p.len(),
                    height * width
                )));
            }
            values.extend(p.iter().map(|&v| T::from_f64(f64::from(v))));
        }
        Self::from_vec([planes.len(), height, width, 1], values)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn channels(&self) -> usize {
        self.dims[3]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    /// Values of batch element `b`.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.values[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.values[b * n..(b + 1) * n]
    }

    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        let [_, h, w, ch] = self.dims;
        self.values[((b * h + y) * w + x) * ch + c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
