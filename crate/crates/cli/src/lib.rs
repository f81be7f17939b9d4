//! Configuration, stage drivers and run manifests behind the `dotspec` binary.

// `!(x > 0.0)` is the idiom for rejecting NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
