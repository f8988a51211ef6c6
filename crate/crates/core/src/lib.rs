//! Parallel augmented random search (ARS) for emergency load-shedding
//! control.
//!
//! The crate bundles a derivative-free policy learner with linear, FNN and
//! LSTM policies, a hierarchical parallel rollout engine, a surrogate
//! fault-induced delayed voltage recovery (FIDVR) environment, rule-based and
//! exhaustive-search baselines, and an evaluation harness.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ars;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod normalizer;
pub mod policy;
pub mod rollout;

pub use error::{ParsError, Result};
