//! Temporal Bell inequalities on a single two-valued system.
//!
//! This crate simulates and exactly evaluates sequential-measurement
//! statistics of a dichotomic magnitude measured for three settings
//! `a`, `b`, `c`:
//!
//! * a joint-reality hidden-variable model over the 8 predetermined
//!   outcome assignments, which obeys the inequalities by construction,
//! * a qubit model with projective collapse, which violates them,
//! * evaluators for the count, probability, and expectation forms of the
//!   inequalities with statistical significance for sampled data,
//! * an optimizer over measurement-direction configurations, and
//! * a config-driven experiment harness behind the `tbs` CLI.

pub mod geometry;
pub mod harness;
pub mod inequality;
pub mod lhv;
pub mod optimize;
pub mod quantum;
pub mod records;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
