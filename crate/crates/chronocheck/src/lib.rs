//! Files and experiments around the consistency model: dataset manifests,
//! checkpoints, CSV tables, reports with plots, and the command-line runner.

pub mod checkpoint;
pub mod cli;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod settings;
pub mod tables;
