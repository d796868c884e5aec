//! Library side of the `rainlane` binary, exposed for integration tests.

pub mod args;
pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod table;

pub use args::{Cli, Command};
pub use bench::{bench_model, cmd_bench, BenchReport, LatencyStats};
pub use commands::run;
pub use error::{classify, error_line, ErrorKind};
pub use pipeline::{cmd_pipeline, PipelineOptions, PipelineRow};
pub use table::Table;
