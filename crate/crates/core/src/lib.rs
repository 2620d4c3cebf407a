//! Failure-log clustering: abstraction of raw logs into event sequences,
//! contrast weighting, optional dimensionality reduction, hierarchical
//! clustering and evaluation.

pub mod cluster;
pub mod dimred;
pub mod ingest;
pub mod metrics;
pub mod stats;
pub mod vectorize;
pub mod pipeline;
pub mod synth;
pub mod sweep;
pub mod report;
