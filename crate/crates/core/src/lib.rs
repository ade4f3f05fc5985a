//! Deterministic simulator of an accelerated mixed-signal neuromorphic chip
//! with hybrid plasticity.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod chip;
pub mod cli;
pub mod config;
pub mod executor;
pub mod experiment;
pub mod neuron;
pub mod plot;
pub mod ppu;
pub mod stpdriver;
pub mod synarray;
pub mod timing;
