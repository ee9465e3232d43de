//! Counter-based splittable random streams.
//!
//! Every random draw in the toolkit comes from a [`StreamRng`] addressed by
//! `(master_seed, stream_id)`. Output `i` of a stream is
//! `mix64(key + (i+1)·GOLDEN_GAMMA)` with `key = mix64(master_seed ^
//! mix64(stream_id·GOLDEN_GAMMA))`, so streams are pure functions of their
//! address: identical across runs and platforms, independent of evaluation
//! order, and cheap to split. `mix64` is the 64-bit finalizer of SplitMix64
//! (Vigna, 2015); `GOLDEN_GAMMA` is `2^64 / φ` rounded to odd.
//!
//! Normal deviates use the Box–Muller cosine branch evaluated with `libm` in
//! f64 regardless of the working precision, which keeps the value stream
//! bit-stable across the f32/f64 instantiations of the rest of the crate.

use crate::error::{CoreError, Result};
use crate::grid::Tensor3;
use crate::real::Real;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRng {
    master_seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
            key: mix64(master_seed ^ mix64(stream_id.wrapping_mul(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    /// Child stream addressed by `label`. Children of distinct labels (and
    /// their descendants) never share outputs with the parent.
    pub fn derive(&self, label: u64) -> Self {
        let child = mix64(self.stream_id.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
            ^ mix64(label.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1));
        Self::new(self.master_seed, child)
    }

    #[inline]
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[inline]
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in the open interval (0, 1) with 53-bit resolution.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal deviate (Box–Muller, cosine branch).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    #[inline]
    pub fn normal<T: Real>(&mut self) -> T {
        T::from_f64(self.next_normal())
    }

    pub fn fill_normal<T: Real>(&mut self, out: &mut [T]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Index draw from an explicit weight vector (need not be normalized).
    pub fn categorical<T: Real>(&mut self, weights: &[T]) -> Result<usize> {
        if weights.is_empty() {
            return Err(CoreError::EmptyShape);
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(CoreError::InvalidArg {
                name: "weights",
                why: "must be non-negative with a positive finite sum",
            });
        }
        let u = self.next_uniform() * total;
        let mut acc = 0.0;
        for (k, w) in weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                return Ok(k);
            }
        }
        Ok(weights.len() - 1)
    }
}

/// I.i.d. standard-normal tensor draw; advances `rng` by one value per entry.
pub fn sample_standard_normal<T: Real>(
    rng: &mut StreamRng,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Tensor3<T>> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(CoreError::EmptyShape);
    }
    let mut t = Tensor3::zeros(channels, height, width);
    rng.fill_normal(t.as_mut_slice());
    Ok(t)
}
