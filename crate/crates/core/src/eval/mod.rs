//! Metrics, significance tests, weight diversity and evaluation campaigns.

pub mod campaign;
pub mod diversity;
pub mod metrics;
pub mod report;
pub mod significance;
