//! Synthesis and simulation toolkit for uncertain discrete-time switched
//! affine systems whose switching decision acts with a one-step delay.
//!
//! The pipeline runs: discretisation → nominal limit cycle → periodic
//! Lyapunov certificate → robust LMI certificate → predictive min-switching
//! closed loop → attractor projection.

pub mod benchmark;
pub mod control_sim;
pub mod error;
pub mod io;
pub mod model;
pub mod nominal;
pub mod numerics;
pub mod pipeline;
pub mod robust;

pub use error::{Error, Result};
