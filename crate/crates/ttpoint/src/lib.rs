//! File formats, configuration and the `ttpoint` command line on top of
//! [`ttpoint_core`].

pub mod checkpoint;
pub mod cli;
pub mod clips_io;
pub mod config;
pub mod error;
pub mod events_io;
pub mod manifest;

pub use error::{Error, Result};
pub use ttpoint_core as core;
