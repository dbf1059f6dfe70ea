//! One-bit quantized MIMO channel estimation with a Gaussian-mixture
//! generative prior.
//!
//! The crate covers the full experimental pipeline:
//!
//! - [`channel_model`]: conditionally Gaussian spatial channels for a ULA,
//!   drawn from a stochastic-geometric cluster model.
//! - [`signal_model`]: pilot design, the Kronecker measurement operator,
//!   one-bit quantization and arcsine-law output statistics.
//! - [`gmm_prior`]: offline fitting of a zero-mean Gaussian mixture over
//!   channels (full, Toeplitz or circulant component covariances), plus the
//!   quantized-domain responsibilities that pick the MAP component online.
//! - [`em_estimator`]: the online EM channel estimator with a closed-form
//!   M-step for Gaussian (or MAP-selected mixture component) priors.
//! - [`baselines`]: genie/global EM variants and Bussgang linear MMSE
//!   estimators.
//! - [`eval_harness`]: reproducible Monte-Carlo sweeps with CSV reports.

pub mod channel_model;
pub mod gmm_prior;
pub mod em_estimator;
pub mod error;
pub mod linalg;
pub mod numerics;
pub mod rng;
pub mod signal_model;

pub use error::{Error, Result};
