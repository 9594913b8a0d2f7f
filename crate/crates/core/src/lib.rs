//! Forensic parsing and reconstruction of IMVU client logs.
//!
//! The crate is organised bottom-up:
//!
//! * [`grammar`] parses and renders single `IMVULog.log` records and groups
//!   multi-line messages.
//! * [`segment`] loads physical log files and rebuilds the round-robin
//!   rotation chain into per-session streams with a wall-clock anchor.
//! * [`chat`] turns chat payload records into deduplicated, timestamped
//!   transcripts.
//! * [`identity`] pulls profiles, masked credentials, contacts and network
//!   endpoints out of a stream.
//! * [`carver`] recovers records and SQLite headers from raw images.
//! * [`generator`] synthesises conforming corpora with ground-truth manifests.
//! * [`report`] and [`examine`] assemble the examination report.

pub mod carver;
pub mod chat;
pub mod examine;
pub mod generator;
pub mod grammar;
pub mod identity;
pub mod literal;
pub mod report;
pub mod segment;
pub mod text;

pub use grammar::{Elapsed, LogLevel, LogRecord, LogicalMessage, RecordHeader};
