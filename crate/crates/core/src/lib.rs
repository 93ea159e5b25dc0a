//! Nonlocal stationary Fisher-KPP problems
//!
//! ```text
//! eps^{-m} (J_eps * u - u) + u (a - u) = 0
//! ```
//!
//! with radial unit-mass kernels `J`, rescaled as `J_eps(z) = eps^{-N} J(z / eps)`,
//! in dimension `N = 1` or `2`. The crate provides kernel discretization, the
//! truncated operator on balls, explicit sub- and super-solutions, a monotone
//! iterative solver with continuation in the truncation radius, and experiment
//! drivers for sweeps in `eps`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod barriers;
mod error;
pub mod exec;
pub mod grid;
pub mod kernel;
pub mod nonlocal_op;
pub mod quadrature;
pub mod resource;
pub mod solver;

pub use error::{KppError, Result};
