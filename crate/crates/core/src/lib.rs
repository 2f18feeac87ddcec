//! Mean-variance temporal-difference policy evaluation with linear features,
//! and an SPSA actor built on top of it, for finite MDPs.
//!
//! Every learned quantity has an exact linear-algebra counterpart here, so
//! fixed points, step-size ceilings and error bounds can be evaluated
//! directly and compared with Monte-Carlo runs.

pub mod actor;
pub mod critic;
pub mod error;
pub mod features;
pub mod gradients;
pub mod mdp;
pub mod stats;
pub mod system;

pub use error::{Error, Result};
