//! Dense 2-D rasters and channel-major 3-D tensors.
//!
//! [`Grid2D`] is the universal carrier for subsurface models, data panels,
//! and maps: `nz` depth samples by `nx` lateral traces, row-major
//! (depth-major) storage. [`Tensor3`] carries latents and decoder
//! activations, channel-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D<E> {
    nz: usize,
    nx: usize,
    data: Vec<E>,
}

impl<E: Copy> Grid2D<E> {
    pub fn filled(nz: usize, nx: usize, value: E) -> Self {
        Self {
            nz,
            nx,
            data: vec![value; nz * nx],
        }
    }

    pub fn from_vec(nz: usize, nx: usize, data: Vec<E>) -> Result<Self> {
        if data.len() != nz * nx {
            return Err(CoreError::ShapeMismatch {
                expected: (nz, nx),
                got: (data.len(), 1),
            });
        }
        Ok(Self { nz, nx, data })
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nz, self.nx)
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
    pub fn get(&self, iz: usize, ix: usize) -> E {
        self.data[iz * self.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, iz: usize, ix: usize, v: E) {
        self.data[iz * self.nx + ix] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<E> {
        self.data
    }

    pub fn same_dims<F: Copy>(&self, other: &Grid2D<F>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(CoreError::ShapeMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    pub fn map<F: Copy>(&self, f: impl Fn(E) -> F) -> Grid2D<F> {
        Grid2D {
            nz: self.nz,
            nx: self.nx,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Real> Grid2D<T> {
    pub fn zeros(nz: usize, nx: usize) -> Self {
        Self::filled(nz, nx, T::zero())
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Grid2D<T>, s: T) -> Result<()> {
        self.same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// Inner product accumulated in f64 so adjoint tests are not limited by
    /// the working precision.
    pub fn dot(&self, other: &Grid2D<T>) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|&a| a.as_f64() * a.as_f64()).sum())
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            let v = v.as_f64();
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        ensure_finite(&self.data, what)
    }
}

pub fn ensure_finite<T: Real>(data: &[T], what: &str) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            what: alloc::string::String::from(what),
        });
    }
    Ok(())
}

/// Channel-major 3-D tensor: `data[c * height * width + i * width + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<E> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<E>,
}

impl<E: Copy> Tensor3<E> {
    pub fn filled(channels: usize, height: usize, width: usize, value: E) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<E>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(CoreError::ShapeMismatch {
                expected: (channels * height, width),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
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
    pub fn plane(&self, c: usize) -> &[E] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [E] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn as_slice(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<E> {
        self.data
    }
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_indexing_is_depth_major() {
        let mut g = Grid2D::zeros(3, 2);
        g.set(2, 1, 7.0f64);
        assert_eq!(g.as_slice()[2 * 2 + 1], 7.0);
        assert_eq!(g.get(2, 1), 7.0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Grid2D::from_vec(2, 2, vec![0.0f32; 3]).is_err());
        assert!(Tensor3::from_vec(2, 2, 2, vec![0.0f32; 7]).is_err());
    }

    #[test]
    fn dot_accumulates_in_f64() {
        let a = Grid2D::filled(1, 3, 2.0f32);
        let b = Grid2D::filled(1, 3, 0.5f32);
        assert_eq!(a.dot(&b).unwrap(), 3.0);
    }

    #[test]
    fn ensure_finite_catches_nan() {
        let mut g = Grid2D::zeros(2, 2);
        g.set(0, 1, f32::NAN);
        assert!(g.ensure_finite("probe").is_err());
    }
}
