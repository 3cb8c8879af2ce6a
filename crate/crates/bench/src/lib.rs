//! Experiment harness for `sinkgraph-core`: IDX and synthetic datasets, the
//! denoising GAN experiment with optional Sinkhorn regularisation, ε sweeps,
//! transport and attention benchmarks, gradient checks and CSV output.

pub mod attnbench;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gradsuite;
pub mod idx;
pub mod lp;
pub mod metrics;
pub mod models;
pub mod otbench;
pub mod streams;
pub mod synth;

pub use error::{BenchError, Result};
