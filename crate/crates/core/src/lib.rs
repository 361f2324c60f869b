//! Exact sub-linear expectation machinery at desk scale.

// `!(x > 0.0)` is the intended way to reject NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambiguity;
pub mod axioms;
pub mod error;
pub mod function;
pub mod gfunc;
pub mod lab;
pub mod pde;
pub mod tree;

pub use error::{Error, Result};
