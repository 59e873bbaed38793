//! Command-line front end: benchmark runs, node roles, ledger and CAS
//! inspection, report rendering and the HTTP server.

pub mod bench;
pub mod commands;
pub mod config;
pub mod report;

pub use bench::{run_benchmark, run_benchmark_with, BenchError, BenchRun, BenchmarkReport, LatencyStats};
pub use config::{BenchSettings, ConfigError, RunConfig};
