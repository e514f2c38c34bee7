//! Simulation and analysis of two-tier hierarchical federated learning
//! with one-bit sign compression.
//!
//! Devices send the signs of minibatch gradients to their edge server,
//! each edge takes a majority vote and applies a sign step, and the cloud
//! averages the edge models every `T_E` edge steps. The crate also carries
//! a full-precision baseline, a variant with a sparsified downlink, the
//! closed-form convergence bounds, and the experiment runner behind the
//! `hiersign` binary.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod compress;
pub mod config;
pub mod dataio;
pub mod engine;
pub mod experiment;
pub mod model;
pub mod par;
