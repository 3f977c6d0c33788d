//! Command-line front end and experiment runner for `lcapa-core`.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;

pub use cli::run;
