//! Mean-field simulation of storage aggregators in a nodal electricity market.

pub mod analysis;
pub mod beliefs;
pub mod cli;
pub mod env;
pub mod io;
pub mod meanfield;
pub mod network;
pub mod policy;
pub mod sim;

pub use cli::cli_main;
