//! Precision bounds and optimal protocols for estimating a function of a
//! parametrized field with a network of qubit sensors.
//!
//! The sensors at positions `x_i` see local amplitudes `f_i(theta)`; the goal
//! is a single quantity `q(theta)`. Around a reference point everything is
//! linear, `q ~ alpha . theta` and `f ~ G theta`, and the best entangled
//! protocol has MSE `u'^2 / t^2` where `u'` solves a small linear program.
//!
//! * [`field`]: field models and gradient matrices
//! * [`lp`]: small revised-simplex LP solver
//! * [`estimation`]: bound, protocol and dual problems
//! * [`oracle`]: brute-force checks for small instances
//! * [`sim`]: Monte-Carlo protocol simulation
//! * [`fisher`]: Fisher-matrix reparametrization
//! * [`applications`]: interpolation, kernel functionals, sensor placement
//! * [`report`]: CSV output

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod applications;
pub mod error;
pub mod estimation;
pub mod field;
pub mod fisher;
pub mod lp;
pub mod oracle;
pub mod report;
pub mod sim;

pub use error::{Error, ErrorClass, Result};
