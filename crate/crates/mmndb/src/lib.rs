//! Multimodal neural database engine.
//!
//! Builds on [`mmndb_core`] with everything that touches the outside world:
//! annotation ingestion, the binary embedding-store and selector formats, a
//! remote HTTP reasoner, parallel fan-out over documents and queries, the
//! benchmark runner with JSON/table reports, and the `mmndb` command line.

pub mod bench;
pub mod cli;
pub mod config;
pub mod ingest;
pub mod parallel;
pub mod remote;
pub mod selector_io;
pub mod store_io;

pub use mmndb_core as core;
