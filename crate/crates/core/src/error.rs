use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Which of the three entropic transport terms of a Sinkhorn divergence failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceTerm {
    /// `W(mu, nu)`.
    Cross,
    /// `W(mu, mu)`.
    SourceSelf,
    /// `W(nu, nu)`.
    TargetSelf,
}

impl fmt::Display for DivergenceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceTerm::Cross => "W(mu, nu)",
            DivergenceTerm::SourceSelf => "W(mu, mu)",
            DivergenceTerm::TargetSelf => "W(nu, nu)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, allowed {allowed:e})")]
    NotSymmetric { asymmetry: f64, allowed: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("non-finite value in {context} at iteration {iteration}")]
    NonFinite {
        context: &'static str,
        iteration: usize,
    },

    #[error("invalid transport problem: {0}")]
    InvalidProblem(String),

    #[error("stale transport solution: marginal residual {residual:e} exceeds {limit:e}")]
    StaleSolution { residual: f64, limit: f64 },

    #[error("node {node} has non-positive degree")]
    ZeroDegree { node: usize },

    #[error("sinkhorn divergence term {term} failed: {source}")]
    DivergenceTerm {
        term: DivergenceTerm,
        #[source]
        source: Box<Error>,
    },

    #[error("loss component {0} is not finite")]
    NonFiniteComponent(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
