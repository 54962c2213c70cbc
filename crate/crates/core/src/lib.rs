//! Endpoint-conditioned diffusion-bridge translation.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: interpolant weights `(alpha, beta, gamma)` and their time derivatives.
//! - [`bridge`]: forward kernel sampling, flow-matching targets and the score/velocity layer.
//! - [`field`]: the evaluable-drift interface shared by closed-form and trained fields.
//! - [`oracle`]: exact conditional means and velocities for Gaussian domains.
//! - [`model`]: a small trainable velocity network with conditioning dropout.
//! - [`sampler`]: reverse ODE/SDE integrators, inversion, guidance and drift mixing.
//! - [`encoder`]: retina filter, PCA projection and stochastic endpoint construction.
//! - [`domains`]: synthetic paired domains sharing a latent, with controllable encoders.
//! - [`analysis`]: Lipschitz estimation, the four-term translation error budget,
//!   convergence fits and representation-alignment metrics.
//!
//! Everything here is `no_std` + `alloc`. The `std` feature (default) only switches
//! error types to `std::error::Error`; `parallel` spreads ensembles over rayon.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod bridge;
pub mod domains;
pub mod encoder;
mod error;
pub mod field;
pub(crate) mod math;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod vector;

pub use error::{Error, Result};
pub use field::{FieldOutput, VelocityField};
pub use schedule::{Schedule, ScheduleKind};
