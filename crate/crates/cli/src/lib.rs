//! Library side of the `nmpc` command: scenario files, overrides and run artifacts.

pub mod output;
pub mod scenario;
