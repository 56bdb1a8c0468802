//! Configuration, persistence and experiment plumbing.

pub mod checkpoint;
pub mod config;
pub mod csvlog;
pub mod experiments;
pub mod manifest;
pub mod plot;
