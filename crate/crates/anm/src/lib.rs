//! File formats, experiment harness, reports and the command line for the
//! active network management benchmark built on [`anm_core`].

pub mod cli;
pub mod clock;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use anm_core as core;
pub use error::{Error, Result};
