//! Boltzmann-gated attention for sequence classification.
//!
//! A transformer-style classifier whose attention edges are binary gates
//! governed by a per-head Boltzmann energy over the gate configuration.
//! Gate marginals come from a mean-field solve, training samples them with
//! a Gumbel relaxation, and an exact enumeration oracle keeps the small
//! cases honest.

pub mod attention;
pub mod data;
pub mod energy;
pub mod error;
pub mod meanfield;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod sampler;
pub mod training;

pub use error::{Error, Result};
