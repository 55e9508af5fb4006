//! Harness around `qllm-core`: synthetic workloads, experiments, sweeps,
//! oracle checks, config files and output formats. The `qllm` binary is a
//! thin CLI over this library.

pub mod config;
pub mod experiment;
pub mod formats;
pub mod oracle;
pub mod report;
pub mod sweep;
pub mod workload;
