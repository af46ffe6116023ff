//! Pedestrian crossing-intention toolkit: ingestion, tracking, skeleton
//! features, classifiers, fusion and evaluation.

pub mod classifiers;
pub mod fixtures;
pub mod fusion;
pub mod ingest;
pub mod metrics;
pub mod skeleton;
pub mod tracker;
pub mod types;

pub use types::*;
