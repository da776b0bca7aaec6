//! Simulator for per-process QoS in two-tier main memory.
//!
//! Processes declare a target fast-memory miss ratio (FMMR). Each epoch the
//! simulator samples their accesses, smooths the observed miss ratio, moves
//! fast-memory quota from processes below target to processes above it and
//! migrates pages along each process's heat gradient.

pub mod cli;
pub mod engine;
pub mod hotness;
pub mod memmgr;
pub mod plot;
pub mod policy;
pub mod scenario;
pub mod telemetry;
pub mod units;
pub mod workload;
