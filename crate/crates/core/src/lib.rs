//! Slot-based object-centric learning with interpretable, reversible slot
//! manipulation.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod eval;
pub mod image;
pub mod inference;
pub mod model;
pub mod par;
pub mod sprites;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
