//! Additive, derivative and Gibbs-weighted particle functionals, their
//! killed variants and the stopping-line decomposition.

mod bessel;
mod eval;
mod spec;

pub use bessel::{expected_bessel_moment, expected_bessel_value, expected_derivative_term, Expectation};
pub(crate) use bessel::{bessel_density0, expect_scaled};
pub use eval::{
    decomposition, eval_additive, eval_contributions, eval_derivative, eval_gibbs, eval_killed, eval_second_moment,
    Contribution, Decomposition, FunctionalValue,
};
pub use spec::{AssumptionFlags, FlagViolation, FunctionalSpec, Piece, Shape, CATALOG_KEYS};
