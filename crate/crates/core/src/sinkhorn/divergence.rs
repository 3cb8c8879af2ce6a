use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{shape_err, DivergenceTerm, Error, Result};
use crate::numerics::tensor::Tensor;
use crate::sinkhorn::problem::{
    cost_matrix_with, uniform, GroundCost, PowerCost, TransportProblem,
};
use crate::sinkhorn::solver::{solve_eot_with, StopRule, TransportSolution};

/// Marginal residual above which [`eot_gradient`] refuses a solution.
pub const STALE_LIMIT: f64 = 1e-6;

/// How the `θ`-dependent self term `W(μ_θ, μ_θ)` enters the gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SelfTermGradient {
    /// Differentiate all three terms.
    #[default]
    Include,
    /// Treat `W(μ_θ, μ_θ)` as a constant.
    Detach,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub exponent: f64,
    pub stop: StopRule,
    pub self_term: SelfTermGradient,
}

impl DivergenceConfig {
    /// Convergence-based stopping with the given iteration cap.
    pub fn new(epsilon: f64, max_iters: usize, exponent: f64) -> Self {
        Self {
            epsilon,
            max_iters,
            exponent,
            stop: StopRule::default(),
            self_term: SelfTermGradient::default(),
        }
    }

    /// Exactly `iters` iterations per term, as used inside a training step.
    pub fn fixed(epsilon: f64, iters: usize, exponent: f64) -> Self {
        Self {
            stop: StopRule::Fixed,
            ..Self::new(epsilon, iters, exponent)
        }
    }
}

#[derive(Clone, Debug)]
pub struct DivergenceOutput {
    pub value: f64,
    /// Gradient with respect to the source atoms, shaped like `xs`.
    pub grad_x: Tensor,
    pub cross: TransportSolution,
    pub source_self: TransportSolution,
    pub target_self: TransportSolution,
}

fn solve_term(
    xs: &Tensor,
    ys: &Tensor,
    wx: &[f64],
    wy: &[f64],
    cfg: &DivergenceConfig,
    cost: &PowerCost,
    term: DivergenceTerm,
) -> Result<TransportSolution> {
    let tag = |e: Error| Error::DivergenceTerm {
        term,
        source: Box::new(e),
    };
    let c = cost_matrix_with(xs, ys, cost).map_err(tag)?;
    let p = TransportProblem::new(wx.to_vec(), wy.to_vec(), c, cfg.epsilon, cfg.max_iters)
        .map_err(tag)?;
    solve_eot_with(&p, cfg.stop).map_err(tag)
}

/// `W(μ, ν) − ½W(μ, μ) − ½W(ν, ν)` for point clouds `xs`, `ys` (rows are atoms).
pub fn sinkhorn_divergence(
    xs: &Tensor,
    ys: &Tensor,
    weights_x: &[f64],
    weights_y: &[f64],
    epsilon: f64,
    max_iters: usize,
    exponent: f64,
) -> Result<f64> {
    let cfg = DivergenceConfig::new(epsilon, max_iters, exponent);
    Ok(divergence_with_gradient(xs, ys, weights_x, weights_y, &cfg)?.value)
}

/// The divergence, its three transport solutions and its gradient in `xs`.
///
/// Empty weight slices mean uniform weights.
pub fn divergence_with_gradient(
    xs: &Tensor,
    ys: &Tensor,
    weights_x: &[f64],
    weights_y: &[f64],
    cfg: &DivergenceConfig,
) -> Result<DivergenceOutput> {
    let (n, d) = xs.dims2()?;
    let (m, d2) = ys.dims2()?;
    if d != d2 {
        return Err(shape_err("sinkhorn_divergence", xs.shape(), ys.shape()));
    }
    let wx: Vec<f64> = if weights_x.is_empty() {
        uniform(n)
    } else {
        weights_x.to_vec()
    };
    let wy: Vec<f64> = if weights_y.is_empty() {
        uniform(m)
    } else {
        weights_y.to_vec()
    };
    let cost = PowerCost::new(cfg.exponent)?;

    let cross = solve_term(xs, ys, &wx, &wy, cfg, &cost, DivergenceTerm::Cross)?;
    let source_self = solve_term(xs, xs, &wx, &wx, cfg, &cost, DivergenceTerm::SourceSelf)?;
    let target_self = solve_term(ys, ys, &wy, &wy, cfg, &cost, DivergenceTerm::TargetSelf)?;
    let value = cross.cost_value - 0.5 * source_self.cost_value - 0.5 * target_self.cost_value;

    let mut grad = danskin(&cross.coupling, xs, ys, &cost, 1.0);
    if cfg.self_term == SelfTermGradient::Include {
        // x enters both arguments of the self-term cost, so rows and columns contribute.
        let rows = danskin(&source_self.coupling, xs, xs, &cost, -0.5);
        let cols = danskin(&source_self.coupling.transpose()?, xs, xs, &cost, -0.5);
        grad.add_assign(&rows);
        grad.add_assign(&cols);
    }
    Ok(DivergenceOutput {
        value,
        grad_x: grad,
        cross,
        source_self,
        target_self,
    })
}

/// `scale · Σ_j π_ij ∇ₓ c(x_i, y_j)` for every source atom.
fn danskin(
    coupling: &Tensor,
    xs: &Tensor,
    ys: &Tensor,
    cost: &impl GroundCost,
    scale: f64,
) -> Tensor {
    let (n, d) = (xs.shape()[0], xs.shape()[1]);
    let m = ys.shape()[0];
    let mut g = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let out = &mut g.data_mut()[i * d..(i + 1) * d];
        for j in 0..m {
            let pij = coupling.at(i, j);
            if pij != 0.0 {
                cost.add_grad_x(xs.row(i), ys.row(j), scale * pij, out);
            }
        }
    }
    g
}

/// Gradient of `cost_value` with respect to the source atoms, holding the
/// optimal coupling fixed.
///
/// Fails with [`Error::StaleSolution`] if the solution's marginal residual
/// exceeds [`STALE_LIMIT`].
pub fn eot_gradient(
    p: &TransportProblem,
    solution: &TransportSolution,
    xs: &Tensor,
    ys: &Tensor,
    cost: &impl GroundCost,
) -> Result<Tensor> {
    if solution.marginal_residual > STALE_LIMIT {
        return Err(Error::StaleSolution {
            residual: solution.marginal_residual,
            limit: STALE_LIMIT,
        });
    }
    eot_gradient_unchecked(p, solution, xs, ys, cost)
}

/// [`eot_gradient`] without the staleness check, for fixed-iteration solves
/// whose coupling is only approximately optimal.
pub fn eot_gradient_unchecked(
    p: &TransportProblem,
    solution: &TransportSolution,
    xs: &Tensor,
    ys: &Tensor,
    cost: &impl GroundCost,
) -> Result<Tensor> {
    let (n, m) = p.dims();
    if xs.dims2()?.0 != n || ys.dims2()?.0 != m || xs.shape()[1] != ys.shape()[1] {
        return Err(shape_err("eot_gradient", xs.shape(), ys.shape()));
    }
    if solution.coupling.shape() != [n, m] {
        return Err(shape_err(
            "eot_gradient",
            solution.coupling.shape(),
            &[n, m],
        ));
    }
    Ok(danskin(&solution.coupling, xs, ys, cost, 1.0))
}
