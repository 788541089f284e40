//! Experiment runner: configuration, presets, subcommands and SVG output.

pub mod commands;
pub mod config;
pub mod plot;
pub mod presets;
