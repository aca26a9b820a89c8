//! File formats, a thread-pool executor and the batch pipeline around
//! [`slicefinder_core`], plus the `slicefinder` command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod provenance;

pub use error::{Error, Result};
pub use parallel::PoolExecutor;
pub use slicefinder_core;
