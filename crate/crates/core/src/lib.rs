//! Certified upper bounds on the number of slipped cycles of
//! phase-synchronization systems described by delayed integro-differential
//! Volterra equations, with and without a small parameter at the highest
//! derivative, plus a direct simulator used to cross-check the bounds.

pub mod bounds;
pub mod config;
pub mod certificates;
pub mod cli;
pub mod error;
pub mod format;
pub mod frequency;
pub mod model;
pub mod quadrature;
pub mod search;
pub mod simulator;

pub use error::{Error, Result};
