//! Simulator for heterogeneous deep-learning accelerators with a matrix
//! engine (MME), a cluster of vector cores (TPC) and a DMA engine.

pub mod cost;
pub mod graph;
pub mod mapping;
pub mod scheduler;
pub mod workloads;
pub mod calibration;
pub mod report;
pub mod trace;
pub mod scenario;
