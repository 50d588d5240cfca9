//! File formats, checkpoints, training runs and reports around
//! `visionunite-core`.

pub mod checkpoint;
pub mod config;
pub mod http;
pub mod io;
pub mod manifest;
pub mod report;
pub mod run;
mod error;

pub use error::{Error, Result};
pub use visionunite_core as core;
