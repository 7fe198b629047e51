//! Adaptive control allocation with a projection operator that bounds both
//! the magnitude and the rate of the adaptive parameters.
//!
//! * [`projection`]: barrier functions and the conventional and modified
//!   element-wise projection operators.
//! * [`allocator`]: adaptive allocation dynamics, Lyapunov solver, ideal
//!   parameters and bound sizing.
//! * [`plant`]: over-actuated linear plant, effectiveness schedule, actuator
//!   saturation and the ADMIRE benchmark.
//! * [`sim`]: closed-loop scenario engine, trajectories and metrics.
//! * [`verify`]: sampled property checks with deterministic witnesses.
//! * [`config`]: TOML configuration with ADMIRE defaults.

// Negated comparisons are used on purpose: `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod config;
pub mod error;
pub mod par;
pub mod plant;
pub mod projection;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use par::Execution;
