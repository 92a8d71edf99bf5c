//! Deterministic discrete-event simulator of a multi-data-center cloud that
//! compares a score-based dynamic load balancer with a throttled baseline.

pub mod balancer;
pub mod cloud;
pub mod config;
pub mod engine;
pub mod execution;
pub mod kernel;
pub mod metrics;
pub mod output;
pub mod scenario;
pub mod stats;
pub mod workload;
