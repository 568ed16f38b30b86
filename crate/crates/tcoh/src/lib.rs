//! File formats, experiment orchestration and the command line for
//! [`tcoh_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod experiment;
pub mod metrics;
