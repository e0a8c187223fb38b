//! Per-query RAG configuration adaptation with memory-aware joint scheduling.
//!
//! A query is profiled, the profile is mapped to a narrowed configuration
//! space, and the scheduler picks the concrete configuration that best fits
//! free KV-cache memory. A discrete-event simulator drives the whole loop.

pub mod config;
pub mod mapping;
pub mod memory;
pub mod metrics;
pub mod profiler;
pub mod scheduler;
pub mod sim;
pub mod types;
pub mod workload;
