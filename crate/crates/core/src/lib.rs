//! Symbolic discovery of network dynamics from node observations.

pub mod autodiff;
pub mod bench;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod graph;
pub mod gp;
pub mod pind;
pub mod rng;
pub mod sindy;

pub use error::{Error, Result};
