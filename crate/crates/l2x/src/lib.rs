//! Files, pipeline and command-line front end for `l2x-core`.

pub mod config_file;
pub mod dataset;
pub mod error;
pub mod explanations;
pub mod model_file;
pub mod oracle_suite;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
