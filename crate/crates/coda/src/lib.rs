//! File formats and the command line front-end for [`coda_core`].
//!
//! - [`hsb`]: the HSB hidden-state container
//! - [`checkpoint`]: adapter checkpoints stored as HSB records
//! - [`text`]: training history table and labels sidecar
//! - [`cli`]: the `coda` subcommands

pub mod checkpoint;
pub mod cli;
pub mod hsb;
pub mod text;

pub use coda_core;
