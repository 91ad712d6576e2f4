//! Numerical fractional calculus.
//!
//! The crate approximates Riemann–Liouville, Caputo and Hadamard fractional
//! derivatives and integrals, either by Grünwald–Letnikov finite differences
//! or by expansions that only involve integer-order derivatives and a few
//! auxiliary moments `V_p`. On top of those kernels it provides direct
//! (discretize-then-optimize) and indirect (expand-then-Hamiltonian) solvers
//! for fractional variational and optimal-control problems.
//!
//! * [`special`]: gamma, Mittag-Leffler, Grünwald weights, Stirling functions.
//! * [`funcmodel`]: expression language with symbolic differentiation,
//!   tabular data and closed-form reference operators.
//! * [`approx`]: expansion coefficients, operator kernels and error bounds.
//! * [`numerics`]: quadrature, RK4, damped Newton and shooting.
//! * [`direct`]: Euler-like, first-variation and isoperimetric discretizations.
//! * [`indirect`]: transformed problems, Hamiltonian BVPs, FDE/FIE solvers.
//! * [`bench`]: problem registry, error metrics and table reproduction.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::redundant_guards)]

pub mod approx;
pub mod bench;
pub mod direct;
mod error;
pub mod funcmodel;
pub mod indirect;
pub mod numerics;
pub mod special;

pub use error::{Error, Result};
