//! Command implementations behind the `dtts` binary.

pub mod commands;
pub mod config;
pub mod inspect;
pub mod render;
pub mod synth;
