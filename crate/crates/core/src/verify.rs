//! Generic verification oracles: central finite differences and
//! power-iteration operator norms. These back the `check-grad` /
//! `check-adjoint` reports and the solver's automatic step size.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::real::Real;
use crate::rng::StreamRng;

/// Central-difference gradient of a scalar function of a flat vector:
/// `(f(x + h e_j) - f(x - h e_j)) / (2h)` per coordinate.
pub fn finite_difference_gradient<T, F>(f: &mut F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(CoreError::InvalidArg {
            name: "h",
            why: "must be positive",
        });
    }
    let mut probe = x.to_vec();
    let mut grad = vec![T::zero(); x.len()];
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let fp = f(&probe)?;
        probe[j] = x[j] - h;
        let fm = f(&probe)?;
        probe[j] = x[j];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(CoreError::NonFiniteAt {
                what: "finite-difference probe",
                index: j,
            });
        }
        grad[j] = (fp - fm) / (h + h);
    }
    Ok(grad)
}

/// Relative L2 distance `|a - b| / max(|a|, tiny)`, accumulated in f64.
/// The yardstick for gradient agreement checks.
pub fn rel_l2_error<T: Real>(reference: &[T], candidate: &[T]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in reference.iter().zip(candidate.iter()) {
        let d = a.as_f64() - b.as_f64();
        num += d * d;
        den += a.as_f64() * a.as_f64();
    }
    libm::sqrt(num) / libm::sqrt(den).max(1e-300)
}

/// Largest singular value of a linear map, estimated by power iteration on
/// the normal operator AᵀA. The Rayleigh estimate is monotone non-decreasing
/// across iterations up to rounding; a zero map returns 0.
pub fn power_iteration_norm<T, A, At>(
    apply: A,
    apply_adjoint: At,
    input_len: usize,
    iters: usize,
    rng: &mut StreamRng,
) -> Result<f64>
where
    T: Real,
    A: Fn(&[T]) -> Vec<T>,
    At: Fn(&[T]) -> Vec<T>,
{
    if input_len == 0 {
        return Err(CoreError::EmptyShape);
    }
    if iters == 0 {
        return Err(CoreError::InvalidArg {
            name: "iters",
            why: "must be at least 1",
        });
    }
    let mut v: Vec<T> = (0..input_len).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        let norm_w = l2(&w);
        if norm_w == 0.0 {
            return Ok(0.0);
        }
        estimate = norm_w;
        v = apply_adjoint(&w);
        if !normalize(&mut v) {
            return Ok(estimate);
        }
    }
    Ok(estimate)
}

fn l2<T: Real>(v: &[T]) -> f64 {
    libm::sqrt(v.iter().map(|&a| a.as_f64() * a.as_f64()).sum())
}

fn normalize<T: Real>(v: &mut [T]) -> bool {
    let n = l2(v);
    if n == 0.0 {
        return false;
    }
    let inv = T::from_f64(1.0 / n);
    for a in v.iter_mut() {
        *a *= inv;
    }
    true
}
