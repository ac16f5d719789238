//! Manifest-driven experiments over the `difflab` library.

pub mod manifest;
pub mod runners;

pub use manifest::{ExperimentKind, Loaded, Manifest};
pub use runners::{run, RunReport};
