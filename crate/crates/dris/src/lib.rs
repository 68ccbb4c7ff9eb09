//! File formats, experiment harness and command line for rank-disagreement
//! importance sampling. The algorithms live in [`dris_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use dris_core as core;
pub use error::{Error, Result};
