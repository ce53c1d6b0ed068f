//! Offline/online experiment pipeline around `pbdw-core`: builds
//! dictionaries, POD spaces and sketched residual blocks, recovers a seeded
//! test set with each comparator and merges the error tables.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod offline;
pub mod online;
pub mod report;
pub mod selftest;

pub use config::{Comparator, RunConfig};
pub use error::{PipelineError, Result};
pub use offline::offline;
pub use online::{online, online_no_truth, run_online, ErrorTable, OnlineOptions, OnlineOutput};
pub use report::report;
