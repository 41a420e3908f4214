//! Multichannel speech enhancement in the STFT domain.
//!
//! Joint dereverberation, interfering-speech cancellation and diffuse-noise
//! reduction: a matched filter / blocking matrix front-end feeds a per-bin
//! Kalman filter that estimates a sidelobe-cancellation filter and a
//! multichannel linear-prediction filter jointly, followed by a spectral
//! gain post-processor. A GEVD-based estimator provides the early target
//! PSD and relative early transfer functions the filter needs.

pub mod error;
pub mod estimator;
pub mod experiment;
pub mod kalman;
pub mod linalg;
pub mod pipeline;
pub mod scenario;
pub mod spatial;
pub mod stft;

pub use error::{Error, Result};
