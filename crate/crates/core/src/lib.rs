//! Simulation and numerical verification toolkit for critical branching
//! Brownian motion: the particle engine, martingale functionals, limit
//! constants computed by quadrature, and ensemble statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::redundant_guards)]

pub mod constants;
pub mod engine;
pub mod error;
pub mod functionals;
pub mod harness;
pub mod kernels;
pub mod quad;
pub mod rng;
pub mod serde_ext;
pub mod stats;
pub mod suites;

pub use error::{Error, Result};
