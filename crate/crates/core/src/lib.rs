//! Transition path sampling between metastable states of a potential energy
//! surface with generalized flow matching.
//!
//! The pipeline runs short Langevin simulations around two minima
//! ([`dynamics`]), learns a surrogate potential from those samples
//! ([`potential`]), fits a neural spline and a marginal velocity field on
//! endpoint couplings ([`coupling`], [`gfm`]), and optionally refines the
//! spline with importance-weighted paths from a replay buffer. [`evaluate`]
//! computes barrier and saddle-distance statistics of sampled paths.

pub mod baselines;
pub mod cli;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod evaluate;
pub mod gfm;
pub mod neural;
pub mod potential;
pub mod surface;

pub use error::{Error, Result};
