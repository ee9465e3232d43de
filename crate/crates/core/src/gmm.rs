//! Per-survey Gaussian-mixture latent encoders.
//!
//! Each monitor survey owns a K-component diagonal mixture over the latent
//! tensor. Sampling draws a component from the (fixed) weights and
//! reparameterizes `latent = mu_k + exp(log_std_k) .* z`, so gradients flow
//! to the drawn component's mean and log-std only; weights stay fixed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::Tensor3;
use crate::real::Real;
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct GmmParams<T> {
    components: usize,
    channels: usize,
    height: usize,
    width: usize,
    /// K mean blocks followed by K log-std blocks, each `channels*height*width`.
    data: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GmmParams<T> {
    /// Default encoder: means 0, log-stds 0 (unit std), uniform weights.
    pub fn new(components: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if components == 0 {
            return Err(CoreError::InvalidArg {
                name: "components",
                why: "need at least one mixture component",
            });
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::EmptyShape);
        }
        let block = channels * height * width;
        Ok(Self {
            components,
            channels,
            height,
            width,
            data: vec![T::zero(); 2 * components * block],
            weights: vec![T::from_f64(1.0 / components as f64); components],
        })
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        if weights.len() != self.components {
            return Err(CoreError::ShapeMismatch {
                expected: (self.components, 1),
                got: (weights.len(), 1),
            });
        }
        let sum: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| w.as_f64() < 0.0) {
            return Err(CoreError::InvalidArg {
                name: "weights",
                why: "must be non-negative and sum to 1 within 1e-9",
            });
        }
        self.weights = weights;
        Ok(self)
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.components
    }

    #[inline]
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    fn block(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn mean(&self, k: usize) -> &[T] {
        let b = self.block();
        &self.data[k * b..(k + 1) * b]
    }

    pub fn mean_mut(&mut self, k: usize) -> &mut [T] {
        let b = self.block();
        &mut self.data[k * b..(k + 1) * b]
    }

    pub fn log_std(&self, k: usize) -> &[T] {
        let b = self.block();
        let off = (self.components + k) * b;
        &self.data[off..off + b]
    }

    pub fn log_std_mut(&mut self, k: usize) -> &mut [T] {
        let b = self.block();
        let off = (self.components + k) * b;
        &mut self.data[off..off + b]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn params(&self) -> &[T] {
        &self.data
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Parameter-block name for a flat offset, for optimizer diagnostics.
    pub fn block_name_at(&self, index: usize) -> String {
        let b = self.block();
        let block_idx = index / b;
        if block_idx < self.components {
            alloc::format!("mean{block_idx}")
        } else {
            alloc::format!("log_std{}", block_idx - self.components)
        }
    }

    fn check_latent(&self, z: &Tensor3<T>) -> Result<()> {
        if z.shape() != self.latent_shape() {
            return Err(CoreError::ShapeMismatch {
                expected: (self.channels * self.height, self.width),
                got: (z.channels() * z.height(), z.width()),
            });
        }
        Ok(())
    }
}

/// Deterministic push-forward of `z` through component `k`:
/// `mu_k + exp(log_std_k) .* z`.
pub fn gmm_push<T: Real>(phi: &GmmParams<T>, z: &Tensor3<T>, k: usize) -> Result<Tensor3<T>> {
    phi.check_latent(z)?;
    if k >= phi.components {
        return Err(CoreError::InvalidArg {
            name: "component_index",
            why: "out of range",
        });
    }
    let mu = phi.mean(k);
    let ls = phi.log_std(k);
    let mut out = z.clone();
    for (o, (&m, &l)) in out.as_mut_slice().iter_mut().zip(mu.iter().zip(ls.iter())) {
        *o = m + l.exp() * *o;
    }
    Ok(out)
}

/// Draws `k ~ Categorical(weights)` then reparameterizes `z`. Returns the
/// drawn component so the paired backward pass can route gradients.
pub fn gmm_sample<T: Real>(
    phi: &GmmParams<T>,
    z: &Tensor3<T>,
    rng: &mut StreamRng,
) -> Result<(Tensor3<T>, usize)> {
    let k = rng.categorical(&phi.weights)?;
    Ok((gmm_push(phi, z, k)?, k))
}

/// Gradients of a scalar loss w.r.t. the mixture parameters for the drawn
/// component: `d/dmu_k = g`, `d/dlog_std_k = g .* exp(log_std_k) .* z`;
/// zero elsewhere; weights receive no gradient (fixed).
pub fn gmm_backward<T: Real>(
    phi: &GmmParams<T>,
    z: &Tensor3<T>,
    component_index: usize,
    grad_latent: &Tensor3<T>,
) -> Result<Vec<T>> {
    phi.check_latent(z)?;
    phi.check_latent(grad_latent)?;
    if component_index >= phi.components {
        return Err(CoreError::InvalidArg {
            name: "component_index",
            why: "out of range",
        });
    }
    let b = phi.block();
    let mut grad = vec![T::zero(); phi.n_params()];
    let ls = phi.log_std(component_index);
    {
        let gm = &mut grad[component_index * b..(component_index + 1) * b];
        gm.copy_from_slice(grad_latent.as_slice());
    }
    {
        let off = (phi.components + component_index) * b;
        let gl = &mut grad[off..off + b];
        for (i, g) in gl.iter_mut().enumerate() {
            *g = grad_latent.as_slice()[i] * ls[i].exp() * z.as_slice()[i];
        }
    }
    Ok(grad)
}
