//! Traffic steering across base stations under forecast uncertainty.
//!
//! A time-slotted network model plus three ways of choosing a steering
//! policy each slot: chance-constrained optimization on demand forecasts,
//! online mirror descent on past losses, and a learned forecaster of optimal
//! base-station loads expanded back into a policy.

pub mod adapted;
mod error;
pub mod metrics;
pub mod model;
pub mod omd;
mod network;
pub mod predictors;
pub mod robust;
pub mod solver;
pub mod traffic;

pub use error::{Axis, OnoError};
pub use network::{NetworkState, TrainSettings};

pub type Result<T> = std::result::Result<T, OnoError>;
