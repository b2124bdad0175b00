//! Distributed state estimation for coupled linear multi-agent systems.
//!
//! Every agent runs a local observer that reconstructs the state of the whole
//! network from its own measurement and the estimates of its communication
//! in-neighbours. The crate covers the graph machinery, the plant model, gain
//! design and error-dynamics assembly, cooperative localization for integrator
//! agents, and a deterministic simulator with agent join/leave events.
//!
//! Agent indices are zero-based throughout the library; external file formats
//! use one-based agent numbers.

pub mod error;
pub mod graphs;
pub mod linalg;
pub mod localization;
pub mod mas;
pub mod observer;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
