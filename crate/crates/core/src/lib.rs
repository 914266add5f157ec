// NaN must fail range checks, hence negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod band;
pub mod bilevel;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod fidelity;
pub mod grid;
pub mod io;
pub mod regularizer;
pub mod ssn;

pub use error::{Error, Result};
