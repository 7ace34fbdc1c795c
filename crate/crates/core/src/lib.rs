//! Sensor pattern noise (PRNU) fingerprints for video source camera identification.
//!
//! The pipeline is split into small modules that mirror the processing chain:
//!
//! * [`imgio`] decodes frames, converts colour to luminance, rescales and samples frames.
//! * [`denoise`] is the wavelet-domain Wiener denoiser and noise residual extraction.
//! * [`fingerprint`] accumulates residuals into a camera fingerprint and persists it.
//! * [`matching`] holds the similarity measures (normalized correlation and PCE).
//! * [`identify`] implements the three video attribution strategies over a registry.
//! * [`eval`] provides the synthetic sensor simulator and the evaluation harness.

pub mod denoise;
pub mod eval;
pub mod fingerprint;
pub mod identify;
pub mod imgio;
pub mod matching;

mod error;

pub use error::{Error, Result};
