//! Std companion of `aeg-core`: JSON file formats, run configuration, the
//! OpenAI-compatible HTTP backend with its response cache, threaded
//! batching, and the `aeg` command line.

pub mod backend;
pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod io;
pub mod pipeline;

pub use backend::{make_backend, HttpBackend, Parallel};
pub use config::RunConfig;
pub use error::AegError;
