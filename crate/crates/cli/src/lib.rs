//! Library surface of the `gpnkit` command-line tool.
//!
//! The binary is a thin wrapper over these modules; they are exposed so
//! integration tests can load checkpoints, parse configs, and rebuild the
//! exact model a run produced.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod figure;
pub mod manifest;
pub mod svg;
pub mod task;
pub mod train;
pub mod verify;
