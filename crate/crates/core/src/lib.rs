//! Data-driven fault isolation for discrete-time LTI systems.
//!
//! The library learns a kernel (parity-space) filter from healthy
//! input/output data alone, turns each fault channel into a dictionary
//! subspace of the multi-dimensional residual, classifies faults by the
//! angle between the residual and each dictionary, and analyzes which fault
//! pairs are mutually discernible through transmission-zero counts.
//!
//! Pipeline sketch:
//!
//! ```text
//! healthy (u, y) --> estimate_kernel --> KernelFilter --> residual r_k
//!                          |                                   |
//!                          +--> build_signatures/dictionaries  |
//!                                        |                     v
//!                                        +------> angles --> decide
//! ```
//!
//! [`discern`] quantifies the intersections between dictionary subspaces and
//! ties them to the transmission zeros of the underlying fault subsystems,
//! both from a model oracle and from data alone.

pub mod classifier;
pub mod data;
pub mod dictionary;
pub mod discern;
pub mod error;
pub mod kernel;
pub mod numlin;
pub mod system;

pub use error::{Error, Result};
