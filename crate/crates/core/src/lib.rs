//! Exact oracles, reverse-time samplers and bound checks for discrete
//! diffusion with an absorbing (mask) forward process on `[S]^d`.
//!
//! Everything is dense: distributions are vectors over all `S^d` states, so
//! the exact routes are meant for small vocabularies and dimensions.

pub mod bounds;
pub mod divergence;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod reverse;
pub mod score;
pub mod state_space;

pub use error::{Error, Result};
