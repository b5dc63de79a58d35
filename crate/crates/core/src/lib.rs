//! Entropy dissipation, non-cutoff collision kernels and weighted velocity norms for the
//! homogeneous Boltzmann equation, with a DSMC solver for relaxation trajectories.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod distributions;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod kernel;
pub mod kf_kernel;
pub mod quadrature;
pub mod solver;
mod sphere;
pub mod verifier;

pub use error::{Error, Result};

/// Velocities live in R^3; in d = 2 the third component is zero.
pub type Vec3 = nalgebra::Vector3<f64>;
