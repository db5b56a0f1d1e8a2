//! Harness around `hotgraph-core`: configuration, index build and
//! persistence, tree training, benchmark sweeps and the cost-model report.

pub mod config;
pub mod pipeline;

pub use config::{RunConfig, SweepAxis};
pub use pipeline::{analyze, bench, build, gen_data, train, BenchRecord, Mode, Paths};
