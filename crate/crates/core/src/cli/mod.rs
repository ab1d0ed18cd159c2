//! Command implementations behind the `hie` binary, usable from code.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use commands::*;
pub use config::RunConfig;
