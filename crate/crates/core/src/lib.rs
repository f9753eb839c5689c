//! Sampling-based safe model predictive control.
//!
//! Discrete barrier states are appended to a point-mass model, iLQG on the
//! embedded model provides time-varying safe feedback gains, and those gains
//! are applied per sample inside a dual real/nominal importance sampler. The
//! harness module runs seeded Monte Carlo studies on cluttered fields.

pub mod barrier;
pub mod cbf;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod femonitor;
pub mod harness;
pub mod rng;
pub mod sampler;
pub mod trajopt;

pub use error::{Error, Result};
