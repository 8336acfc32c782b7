//! Whittle-index Q-learning for restless bandits.
//!
//! The crate provides an exact dynamic-programming oracle for Whittle
//! indices, three learners (tabular, linear and a two-layer ReLU network),
//! offline convergence diagnostics and a seeded Monte-Carlo harness with CSV,
//! JSON and SVG outputs.

// NaN-rejecting range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximator;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod oracle;
pub mod par;
pub mod seed;

pub use error::{Error, Result};
