//! Majority-dynamics percolation on the square lattice.
//!
//! Sites start open independently with probability `p` and then follow
//! continuous-time majority dynamics driven by per-site Poisson clocks. The
//! crate evolves configurations exactly, detects crossings and circuits of
//! open sites, and estimates the probabilities of such events.

pub mod clocks;
pub mod couplings;
pub mod dynamics;
pub mod enhancement;
pub mod error;
pub mod estimation;
pub mod grid;
pub mod oracle;
pub mod percolation;

pub use clocks::{ClockStream, SeedSpec};
pub use error::{Error, Result};
pub use grid::{BoundaryPolicy, Rect, Site, SpinConfig};

/// Float formatting used by every text output: 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
