//! Age-optimal joint sampling and routing over heterogeneous routes with
//! random delays, intermittent availability and an average energy budget.
//!
//! The solver computes the threshold-structured optimal policy with a nested
//! bisection over the Lagrange multiplier `c` and the Dinkelbach parameter
//! `λ`, around a relative-value fixed point over the finite route set. The
//! [`eval`] module evaluates any threshold policy exactly, and [`sim`]
//! provides a Monte Carlo ground truth.
//!
//! Start with [`model::validate`] and [`solver::solve`]; the guide in `book/`
//! walks through the pieces.

pub mod benchmarks;
pub mod eval;
pub mod mdp;
pub mod model;
pub mod policy;
pub mod quadrature;
pub mod reavi;
pub mod sim;
pub mod solver;

pub use model::{validate, AvailabilityState, DelayMarginal, NetworkConfig, NetworkSpec, RouteSpec};
pub use policy::{MixedPolicy, ThresholdPolicy};
pub use solver::{solve, Solution, SolveError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/action-values.md")]
    mod action_values {}
    #[doc = include_str!("../../../book/src/reavi.md")]
    mod reavi {}
    #[doc = include_str!("../../../book/src/thresholds.md")]
    mod thresholds {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
