//! Entropic optimal transport between discrete measures.
//!
//! [`solve_eot`] runs alternating log-domain softmin updates of the dual
//! potentials; there is no exp-domain path, so tiny `ε` cannot underflow.
//! [`sinkhorn_divergence`] debiases the entropic cost with the two self-transport
//! terms, and [`divergence_with_gradient`] also returns the gradient with respect
//! to the source atoms through the optimal couplings (Danskin's theorem).
//! [`smoothness_probe`] estimates how Lipschitz that gradient is along a
//! parametric family of point clouds.

mod divergence;
mod probe;
mod problem;
mod solver;

pub use divergence::{
    divergence_with_gradient, eot_gradient, eot_gradient_unchecked, sinkhorn_divergence,
    DivergenceConfig, DivergenceOutput, SelfTermGradient, STALE_LIMIT,
};
pub use probe::{smoothness_probe, PointFamily, ProbeConfig, ProbeRow, Translation};
pub use problem::{cost_matrix, GroundCost, PowerCost, TransportProblem, WEIGHT_SUM_TOL};
pub use solver::{solve_eot, solve_eot_with, StopRule, TransportSolution, CONVERGENCE_TOL};
