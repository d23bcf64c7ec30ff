//! Files, configuration, thread pools and the command line around
//! [`nescfn_core`].
//!
//! * [`nesd`]: trajectory dataset files.
//! * [`checkpoint`]: network parameters plus resumable trainer state.
//! * [`config`]: presets layered with TOML files and flags.
//! * [`report`]: CSV and JSON outputs.
//! * [`exec`]: a rayon-backed executor.
//! * [`cli`]: the `nescfn` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod container;
mod error;
pub mod exec;
pub mod nesd;
pub mod report;

pub use container::Header;
pub use error::{Error, Result};
