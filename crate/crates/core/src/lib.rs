//! Learning contracting vector fields from demonstrations.
//!
//! A vector field `ẋ = f(x)` is fit to demonstrated positions and velocities
//! by ridge regression over a random-feature approximation of a matrix-valued
//! kernel (Gaussian separable or curl-free). The field is constrained to vanish
//! on a set of equilibria, and the symmetric part of its Jacobian is forced to
//! be negative (semi)definite at sampled points, which makes the learned
//! dynamics contract towards the demonstrated motion. The resulting
//! least-squares problem with linear matrix inequalities is solved by an ADMM
//! splitting with per-point PSD-cone projections.
//!
//! Module map:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`dataset`] | CSV ingestion, velocity estimation, averaging, subsampling |
//! | [`kernels`] | exact matrix-valued kernels and an exact kernel-ridge fit |
//! | [`features`] | random feature maps, their Jacobians, the vanishing projector |
//! | [`solver`] | constrained least squares via ADMM |
//! | [`dynamics`] | trained fields, contraction diagnostics, Dormand–Prince rollouts |
//! | [`metrics`] | reproduction, goal, grid-stability and DTW metrics |
//! | [`cli`] | configs, model files and the command implementations |

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod kernels;
pub mod metrics;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
