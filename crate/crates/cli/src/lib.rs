//! File formats, dataset loading, benchmarks and the command implementations
//! behind the `hefl` binary. The simulator itself lives in `hefl-core`; this
//! crate owns everything that touches the filesystem or the clock.

pub mod bench;
pub mod chainio;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod reportio;
