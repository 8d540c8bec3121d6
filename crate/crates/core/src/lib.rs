#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Convergence-rate bounds for the availability of a binary-state
//! repairable system with heavy-tailed working and repair times, together
//! with exact event-driven simulation of the underlying alternating renewal
//! process and of the paired (coupled) process used to verify the bound.

pub mod bound;
pub mod coupling;
pub mod model;
pub mod numerics;
pub mod renewal;
pub mod rng;
pub mod stats;

pub use model::{validate, ModelError, ModelParams, RawParams, Regime, SystemState};
pub use rng::RngStreams;
