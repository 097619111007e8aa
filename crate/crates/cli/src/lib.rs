//! Scene configuration, artifact I/O and the `forcedual` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod scene;
pub mod schedule;

pub use config::SceneConfig;
pub use error::{CliError, CliResult};
