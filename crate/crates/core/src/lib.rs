//! Multi-scale adaptive teacher weighting for multi-teacher knowledge
//! distillation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod composition;
pub mod distill;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod operators;
pub mod runner;
pub mod safety;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{ConfigIssue, Error, Result};
