//! Frozen-time stability certificates for discrete-time, time-varying,
//! nonlinear MIMO feedback loops `x = F u + G T x`.
//!
//! - [`signals`]: finite signals and moving-window fading-memory norms.
//! - [`operators`]: causal time-varying operators, frozen-time snapshots,
//!   induced norms and frozen closed-loop classification.
//! - [`variation`]: snapshot-difference traces and variation coefficients.
//! - [`certificates`]: window conditions, gain constants and reports.
//! - [`simulator`]: closed-loop simulation and example scenario builders.

pub mod certificates;
pub mod error;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod signals;
pub mod simulator;
pub mod variation;

pub use error::{Error, Result};
