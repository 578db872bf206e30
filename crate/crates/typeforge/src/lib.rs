//! Command-line detector for type errors in Python projects: project
//! indexing, the model gateway, the test harness and the commands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod gateway;
pub mod harness;
pub mod index;
pub mod stub;
