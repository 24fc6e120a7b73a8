//! Spiking neural networks with spatio-temporal synaptic connections.
//!
//! The crate covers the full path from raw neuromorphic recordings to a
//! trained classifier:
//!
//! * [`events`]: event streams, frame aggregation, dataset readers and the
//!   frame cache format.
//! * [`diff`]: dense tensors and a reverse-mode tape with closed-form
//!   backward maps for every primitive, plus a finite-difference checker.
//! * [`neuron`]: iterative leaky integrate-and-fire dynamics with an
//!   arctangent surrogate gradient.
//! * [`stsc`]: the temporal response filter, the feedforward lateral
//!   inhibition gate and their product.
//! * [`net`]: architecture strings, insertion policies and the forward
//!   pipeline.
//! * [`train`]: voting MSE loss, Adam, the BPTT training loop and sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the recurrences they implement.
#![allow(clippy::needless_range_loop)]

pub mod diff;
pub mod error;
pub mod events;
pub mod exec;
pub mod net;
pub mod neuron;
pub mod stsc;
pub mod train;
pub mod validate;

pub use error::{Error, ErrorKind, Result};

#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

#[cfg(feature = "single-precision")]
pub(crate) use std::f32::consts::PI;
#[cfg(not(feature = "single-precision"))]
pub(crate) use std::f64::consts::PI;

/// Test tolerance: `tol64` in 64-bit builds, at least `1e-4` in 32-bit ones.
#[cfg(test)]
pub(crate) fn tol(tol64: Real) -> Real {
    if cfg!(feature = "single-precision") {
        tol64.max(1e-4)
    } else {
        tol64
    }
}
