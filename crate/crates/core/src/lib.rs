pub mod config;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kinetic;
pub mod macro_solver;
pub mod model;
pub mod phase_space;

pub use error::{Error, Result};
