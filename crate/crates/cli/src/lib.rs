//! Command-line front end and HTTP session server for `slotaug`.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod png;
pub mod server;
pub mod settings;
