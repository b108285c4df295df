//! Estimation of the early part of a time-varying room impulse response
//! for a microphone moving along a straight line past a static source.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`]: shoebox room, image sources, band-limited RIR synthesis and
//!   trajectory discretisation.
//! * [`signal`]: excitation, the moving-microphone observation and noise.
//! * [`transition`]: block-sparse transition matrices built from reflection
//!   tracks (location-variant and location-invariant forms).
//! * [`dtw`]: estimation of the location-invariant matrix from the two
//!   endpoint RIRs by dynamic time warping.
//! * [`kalman`]: the state-space recursion and the four compared algorithms.
//! * [`harness`]: experiment configuration, orchestration and CSV export.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod dtw;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod linalg;
pub mod scene;
pub mod signal;
pub mod transition;

pub use error::{Error, Result};

/// Normalised sinc, `sin(pi x) / (pi x)`.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}
