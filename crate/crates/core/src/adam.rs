//! ADAM with bias correction over flat parameter buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::real::Real;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step: u64,
    beta1: T,
    beta2: T,
    epsilon: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self::with_hyper(len, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON)
    }

    pub fn with_hyper(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step: 0,
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            epsilon: T::from_f64(epsilon),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    #[inline]
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[T] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[T] {
        &self.second_moment
    }
}

/// One ADAM update. Rejects shape mismatches and non-finite gradients (the
/// error carries the flat index; callers owning a parameter layout map it to
/// a block name).
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(CoreError::ShapeMismatch {
            expected: (params.len(), 1),
            got: (grads.len(), state.len()),
        });
    }
    if !(lr > T::zero()) {
        return Err(CoreError::InvalidArg {
            name: "lr",
            why: "must be positive",
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(CoreError::NonFiniteAt {
            what: "gradient",
            index,
        });
    }

    state.step += 1;
    let one = T::one();
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = one - b1.powi(state.step as i32);
    let bc2 = one - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        *m = b1 * *m + (one - b1) * g;
        let v = &mut state.second_moment[i];
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
