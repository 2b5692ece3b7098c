//! File formats, experiment runner, reports and the `fedmix` command line
//! on top of [`fedmix_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fmps;
pub mod fmtd;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
