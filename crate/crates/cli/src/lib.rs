//! Config-driven experiment harness: shard preparation, runs and reports.

pub mod commands;
pub mod config;
pub mod fsutil;
pub mod report;
pub mod shards;

pub use config::ConfigFile;
