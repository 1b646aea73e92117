// Range checks are written as `!(x > lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cli;
pub mod config;
pub mod evaluation;
pub mod imaging;
pub mod landmarks;
pub mod masking;
pub mod pipeline;
pub mod poisson;
pub mod reintegration;
pub mod service;
pub mod synthetic;
pub mod transport;
pub mod warp;
