//! Configuration, presets and experiment runners for the `paramtrap` command.

pub mod app;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod presets;
pub mod seeds;
