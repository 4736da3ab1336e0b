//! File formats, the parallel replication pool, the self-check suite and the
//! `caprecap` command-line tool built on `caprecap-core`.

pub mod check;
pub mod cli;
pub mod format;
pub mod io;
pub mod parallel;
pub mod pipeline;

pub use caprecap_core as core;
