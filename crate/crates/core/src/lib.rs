#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod detector;
pub mod engine;
pub mod forwarding;
pub mod ha;
pub mod metrics;
pub mod registration;
pub mod scenario;
pub mod simnet;
pub mod time;
