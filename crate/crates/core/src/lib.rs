//! Numerical engine for two relativistic scalar particles coupled by a
//! Fokker (action-at-a-distance) interaction.
//!
//! The crate evaluates lattice versions of the Fokker action, the
//! velocity/momentum coupling operator and its determinant measure, Monte
//! Carlo estimates of the two-proper-time kernel over Brownian-bridge
//! worldlines, the double proper-time integral, and the constrained
//! dynamics of the modified propagator where Minkowski time coordinates
//! take over the role of the proper-time clocks.
//!
//! Modules:
//! - [`grid`]: proper-time grids, endpoints and worldlines.
//! - [`action`]: model parameters, intervals, regularized light-cone delta, actions.
//! - [`kernel`]: coupling operator, momenta, Hamiltonian and determinants.
//! - [`propagator`]: bridge sampling, free kernels, kernel estimator, proper-time quadrature.
//! - [`modified`]: forces, constraint flow, shooting and the constrained estimator.
//! - [`checks`]: identity suites with residuals, used by the batch driver.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod action;
pub mod checks;
pub mod grid;
pub mod kernel;
pub mod modified;
pub mod propagator;
pub mod quadrature;
pub mod sampling;

mod error;

pub use error::{FokkerError, Result};

/// A spacetime point or velocity: time component first, then three spatial ones.
pub type Vec4 = [f64; 4];

/// Hard cap on the total number of velocity slots (both particles) of a coupling operator.
pub const MAX_SLOTS: usize = 512;
