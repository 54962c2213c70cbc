//! File formats, experiment configs and command implementations for the
//! `bridgekit` CLI, on top of [`bridgekit_core`].

pub use bridgekit_core as core;

pub mod commands;
pub mod config;
pub mod output;
pub mod store;
pub mod tensor_file;
