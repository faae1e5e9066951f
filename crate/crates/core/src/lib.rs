//! ICAM: an instance-conditioned adaptation model for routing problems.
//!
//! Modules from the bottom up: [`numeric`] (tensors, tape autodiff, the fused
//! AAFM kernel, checkpoints), [`instance`] (TSP/CVRP instances, generators,
//! CVRPLIB I/O), [`model`] (encoder and decoder), [`rollout`] (solution
//! construction and feasibility), [`train`], [`eval`] and the [`cli`].

pub mod cli;
pub mod error;
pub mod eval;
pub mod instance;
pub mod model;
pub mod numeric;
pub mod rollout;
pub mod train;

pub use error::{Error, Result};
