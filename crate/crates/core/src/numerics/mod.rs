//! Dense tensors, the symmetric eigensolver, reverse-mode differentiation and
//! finite-difference gradient checks.

pub mod autodiff;
pub mod eig;
pub mod gradcheck;
pub(crate) mod kernels;
pub mod linalg;
pub mod tensor;

pub use linalg::spectral_norm;
pub use tensor::{MulCounter, Tensor};
