//! Scenario files and run output.

pub mod scenario;
pub mod tracefile;
