//! File formats, training pipeline and command-line front end for the
//! face-token mesh autoencoder in `face-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod obj;
pub mod pipeline;
pub mod report;
