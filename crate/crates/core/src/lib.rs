//! Multistep host-workload forecasting with stacked GRU/LSTM networks.
//!
//! The pipeline: [`data`] turns raw per-task usage traces into normalized,
//! windowed per-machine series; [`model`] holds the recurrent networks;
//! [`train`] fits them (BPTT with gradient descent or L-BFGS, plus grid
//! search); [`prune`] removes whole hidden units to cut inference cost;
//! [`online`] keeps a deployed model current with prequential adaptation; and
//! [`eval`] provides the error metrics and cost/latency reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod model;
pub mod online;
pub mod prune;
pub mod train;
pub mod util;

pub use error::{Error, Result};
