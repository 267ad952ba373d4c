//! Named experiments, their configuration files and the command-line
//! operations built on them.

pub mod commands;
pub mod config;
pub mod recipes;
pub mod spacetime;
