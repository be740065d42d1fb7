//! Estimation of an outcome mean when the outcome is missing not at random
//! and a shadow instrument is available: inverse probability weighting,
//! outcome regression, doubly robust and locally efficient estimators, with
//! sandwich variances, a Monte Carlo harness and identification probes.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod estimators;
pub mod identification;
pub mod model;
pub mod moments;
pub mod simharness;
pub mod solver;
pub mod stats;

pub use data::{Dataset, Observation};
pub use error::{Error, Result};
pub use model::ModelConfig;
