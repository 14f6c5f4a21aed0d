//! The `leaflet` command-line tool and its review-queue HTTP service.

pub mod commands;
pub mod config;
pub mod server;

pub use commands::{run, Cli, Command, Outcome};
pub use config::PipelineConfig;
