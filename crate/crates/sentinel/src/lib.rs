//! Runtime side of the toolkit: wire clients for sampler / detector / parser
//! services, retries, the backend config file, dataset and manifest files,
//! the per-image worker pool and CSV/SVG output for the analyses.
//!
//! The algorithms themselves live in [`sentinel_core`].

pub mod analysis_io;
pub mod checks;
pub mod config;
pub mod dataset;
pub mod error;
pub mod retry;
pub mod runner;
pub mod serve;
pub mod transport;
pub mod wire;

pub use error::Error;
pub use sentinel_core as core;
