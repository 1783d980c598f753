//! Anytime-valid coverage monitoring for bandwidth-limited federated
//! conformal prediction.
//!
//! The library assembles a per-step bound `b_t` on conditional miscoverage
//! from predictable slack terms, bets against `E[M_t | F_{t-1}] <= b_t` with
//! a nonnegative e-process, and tracks a time-uniform Hoeffding envelope on
//! the cumulative residual. A synthetic federated swarm, predictable
//! controllers, and an experiment harness sit on top.

// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod betting;
pub mod controller;
pub mod envelope;
pub mod federation;
pub mod harness;
pub mod quantize;
pub mod simgen;
pub mod slack_model;
pub mod training_model;
