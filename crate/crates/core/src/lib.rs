//! Automated assembly of IRT test forms against an absolute target
//! information function by grand canonical Monte Carlo sampling over item
//! subsets of varying length.
//!
//! - [`irt`]: 3PL information curves, targets and the distance `E`.
//! - [`bank`]: item banks on disk and synthetic generation.
//! - [`gcmc`]: the replace/remove/add chain, its statistics and solution archive.
//! - [`annealing`]: cooling to a desired distance, optimal test length, item-potential sweeps.
//! - [`density`]: exact, counted and recovered densities of tests, calibration of `T` and `mu`.
//! - [`cli`]: the file-driven command implementations behind the `gcmc-ata` binary.

pub mod error;
pub mod io;
pub mod irt;
pub mod bank;
pub mod gcmc;
pub mod density;
pub mod annealing;
pub mod cli;

pub use error::{Error, Result};
