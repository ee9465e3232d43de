//! Probabilistic joint recovery of time-lapse post-stack seismic surveys.
//!
//! The crate implements the full inversion stack on top of a minimal dense
//! numeric substrate: a matrix-free post-stack modeling operator (trace
//! derivative composed with wavelet convolution), an untrained deep-decoder
//! generator with per-survey Gaussian-mixture latent encoders, and three
//! solver drivers (joint weak / joint strong / independent). Posterior
//! analysis (time-lapse means, uncertainty maps, metrics) lives in
//! [`analysis`]; synthetic ground truth generation in [`scenario`].
//!
//! Everything is deterministic under a single 64-bit master seed and generic
//! over `f32`/`f64` via the [`Real`] trait. The crate is `no_std`-compatible
//! (requires `alloc`); IO, file formats, and the CLI live in the companion
//! `pjrm-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod analysis;
pub mod decoder;
pub mod error;
pub mod gmm;
pub mod grid;
pub mod poststack;
pub mod real;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod verify;

pub use error::{CoreError, Result};
pub use grid::{Grid2D, Tensor3};
pub use real::Real;
pub use rng::StreamRng;
