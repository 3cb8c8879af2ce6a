//! Sinkhorn-regularized adversarial objectives and frequency-selective graph
//! attention, built on a small dense tensor library with tape-based reverse-mode
//! differentiation.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs; file formats, timing and the experiment harness live
//! in the companion `sinkgraph-bench` crate.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`numerics`] | [`Tensor`], symmetric Jacobi eigensolver, autodiff [`Tape`], gradient checks |
//! | [`sinkhorn`] | log-domain entropic OT, debiased Sinkhorn divergence, Danskin gradients, smoothness probe |
//! | [`graph`] | similarity graphs, normalized Laplacian, graph Fourier transform, high-pass filter |
//! | [`fsgt`] | patching, frequency-selective attention heads, DMRB/HTB blocks, discriminator spatial attention |
//! | [`losses`] | pixel, SSIM, adversarial, domain-adaptation losses and their weighted objectives |
//! | [`nn`] | parameter layers, initialisation and the Adam optimizer |

#![no_std]

extern crate alloc;

pub mod error;
pub mod fsgt;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use numerics::autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
pub use numerics::eig::{sym_eig, EigenDecomposition};
pub use numerics::tensor::Tensor;
