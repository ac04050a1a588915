//! Ride-hailing aggregator simulation and budget-constrained coupon
//! allocation.
//!
//! * [`sim`] simulates the marketplace one hourly slot at a time.
//! * [`estimators`] trains the backbone probability models.
//! * [`dual`] solves the Lagrangian dual of the allocation problem.
//! * [`fca`] tracks in-range rates with windowed Beta posteriors.
//! * [`rla`] learns per-slot multiplier adjustments with PPO.
//! * [`bench`] runs baselines and computes the evaluation metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dual;
pub mod error;
pub mod estimators;
pub mod fca;
pub mod nn;
pub mod rla;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
