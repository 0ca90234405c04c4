//! Stochastic maximum principle toolkit for control problems whose terminal
//! cost is evaluated at a stopping time.

// `!(x > 0.0)` also rejects NaN, which is the intent everywhere it appears.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod constrained;
pub mod error;
pub mod forward;
pub mod grid;
pub mod mc;
pub mod model;
pub mod regression;
pub mod report;
pub mod scenarios;
pub mod smp_check;
pub mod stopping;

pub use error::{Error, Result};
