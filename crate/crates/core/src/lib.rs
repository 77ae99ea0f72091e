//! Synthesis and verification of optimal controllers for finite-horizon
//! two-player partially nested LQG problems.

pub mod bench;
pub mod centralized;
pub mod cli;
pub mod controller;
pub mod error;
pub mod gains_file;
pub mod linalg;
pub mod monte_carlo;
pub mod oracles;
pub mod problem;
pub mod synthesis;

pub use error::{Error, Result};
