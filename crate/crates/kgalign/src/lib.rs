//! File formats, synthetic data, the end-to-end pipeline and the command
//! implementations behind the `kgalign` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod textemb;

pub use error::{Error, Result};
