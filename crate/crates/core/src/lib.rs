//! High-confidence, behavior-agnostic off-policy evaluation for tabular MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs, policies and exact dynamic-programming oracles.
//! - [`envs`]: bandit and gridworld benchmarks plus off-policy dataset collection.
//! - [`features`]: feature maps and the estimating-equation residual.
//! - [`divergences`]: f-divergences and closed-form worst-case reweighting over
//!   the divergence ball around the empirical distribution.
//! - [`coindice`]: the CoinDICE saddle-point interval solver.
//! - [`baselines`]: importance-sampling estimates with empirical Bernstein,
//!   Student-t and BCa bootstrap intervals.
//!
//! Every estimator returns a [`ConfidenceInterval`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod coindice;
pub mod divergences;
pub mod envs;
mod error;
pub mod features;
mod interval;
pub mod mdp;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use interval::ConfidenceInterval;
