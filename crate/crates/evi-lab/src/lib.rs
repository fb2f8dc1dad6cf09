//! Experiment harness around the core library: strict TOML configs, shipped
//! example presets, parallel check orchestration, and on-disk artifacts for
//! the `evi-lab` binary.

pub mod artifacts;
pub mod config;
pub mod orchestrate;
pub mod presets;
