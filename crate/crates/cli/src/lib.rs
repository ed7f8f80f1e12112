//! Configuration, snapshot, and report plumbing for the `fracstep` binary.
//!
//! The library half of the crate exists so integration tests can drive the
//! same parsing and output code paths the binary uses.

pub mod check;
pub mod config;
pub mod report;
pub mod snapshot;
