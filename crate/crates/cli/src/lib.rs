//! Configuration, pipeline stages, artifact bundles and verification behind
//! the `polysync` command-line tool.

pub mod bundle;
pub mod config;
pub mod pipeline;
pub mod verify;
