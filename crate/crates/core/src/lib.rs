//! Elective surgery scheduling under uncertain durations.
//!
//! The generic assignment model lives in [`scheduler`]. Three ways of
//! bounding the per-slot overtime probability plug into it: a trained
//! ReLU network embedded as MILP rows ([`fnn`]), a piecewise-linear
//! square-root approximation of the normal quantile constraint ([`plf`]) and
//! a scenario-based chance constraint ([`sbm`]). Schedules are scored by
//! Monte-Carlo simulation in [`evaluate`].

pub mod distributions;
pub mod fnn;
pub mod error;
pub mod evaluate;
pub mod instance;
pub mod milp;
pub mod pipeline;
pub mod plf;
pub mod sbm;
pub mod scheduler;

pub use error::{Error, Result};
pub use instance::Instance;
pub use scheduler::Schedule;
