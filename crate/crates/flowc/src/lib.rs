//! Compile ODE flow maps into width-d leaky-ReLU feedforward networks.

pub mod deep;
pub mod error;
pub mod monotone;
pub mod ode;
pub mod pl;
pub mod scalar;
pub mod split;

pub use error::{Error, Result};
