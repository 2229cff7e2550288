//! Leading-digit forensics for reported count time series.
//!
//! The crate extracts first and second significant digits from count data,
//! compares them with the Newcomb-Benford laws through Monte-Carlo chi-square
//! tests, adjusts p-value families for multiplicity, and builds simultaneous
//! multinomial confidence intervals for the digit proportions.

pub mod adjust;
pub mod digits;
pub mod error;
pub mod inference;
pub mod pipeline;
pub mod report;
pub mod simultci;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
