// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod field;
pub mod flow;
pub mod geodesic;
pub mod lattice;
pub mod mobius;

pub use error::{Error, Result};
