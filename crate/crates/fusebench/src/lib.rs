//! File formats, configuration, experiment runs and sweeps around
//! [`fusebench_core`].

pub mod config;
pub mod error;
pub mod experiment;
pub mod feat;
pub mod labels;
pub mod mmcm;
pub mod sweep;

pub use error::{Error, Result};
