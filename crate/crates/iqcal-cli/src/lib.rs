//! Library behind the `iqcal` binary: scenario configs, runners, and trace
//! files.
//!
//! A scenario lives in a sectioned key–value config file ([`config`]), runs
//! through the [`iqcal`] simulation crate ([`run`]), and lands on disk as a
//! CSV or JSONL trace whose header embeds the fully resolved configuration
//! ([`trace`]). Every run is seeded, so rerunning a config reproduces its
//! trace byte for byte.

pub mod config;
pub mod run;
pub mod trace;
