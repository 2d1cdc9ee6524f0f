//! Bloch-wave modulation theory for the semiclassical cubic NLS: band
//! structure, resonant mode systems, amplitude equations and a direct
//! split-step solver to compare against.

// Index loops mirror the formulas; negated comparisons reject NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod amplitude;
pub mod approx;
pub mod bloch;
pub mod coupling;
pub mod error;
pub mod fft;
pub mod grid;
pub mod harness;
pub mod io;
pub mod lattice;
pub mod modes;
pub mod nls;
pub mod par;

pub use error::{Error, Result};
