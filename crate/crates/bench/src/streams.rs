//! Stream labels for [`sinkgraph_core::rng::stream_id`]. Each consumer of
//! randomness in the harness owns one label, so changing the amount drawn by
//! one consumer never shifts another.

pub const SYNTH: u64 = 1;
/// Training noise, indexed by epoch.
pub const NOISE: u64 = 2;
pub const TEST_NOISE: u64 = 3;
/// Minibatch order, indexed by epoch.
pub const SHUFFLE: u64 = 4;
pub const GENERATOR_INIT: u64 = 5;
pub const DISCRIMINATOR_INIT: u64 = 6;
pub const OT_BENCH: u64 = 7;
pub const GRAD_CHECK: u64 = 8;
