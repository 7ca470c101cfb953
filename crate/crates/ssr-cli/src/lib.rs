//! Library surface of the pipeline CLI, exposed so integration tests can
//! drive stages directly.

pub mod commands;
pub mod config;
