use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::numerics::tensor::Tensor;

/// Accepted deviation of a weight vector's sum from 1.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A ground cost between points together with its gradient in the first argument.
pub trait GroundCost {
    fn cost(&self, x: &[f64], y: &[f64]) -> f64;

    /// Adds `scale · ∇ₓ c(x, y)` to `out`.
    fn add_grad_x(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]);
}

/// `c(x, y) = ‖x − y‖ᵖ` with `p ∈ [1, 2]`.
///
/// The gradient at coincident points is taken as zero; for `p > 1` that is the
/// true derivative and for `p = 1` it is the minimal-norm subgradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerCost {
    pub exponent: f64,
}

impl PowerCost {
    pub fn new(exponent: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&exponent) {
            return Err(Error::InvalidProblem(format!(
                "cost exponent {exponent} outside [1, 2]"
            )));
        }
        Ok(Self { exponent })
    }

    pub fn squared() -> Self {
        Self { exponent: 2.0 }
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl GroundCost for PowerCost {
    fn cost(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2 = sq_dist(x, y);
        if self.exponent == 2.0 {
            d2
        } else {
            libm::pow(d2, 0.5 * self.exponent)
        }
    }

    fn add_grad_x(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let factor = if self.exponent == 2.0 {
            2.0
        } else {
            let d = libm::sqrt(sq_dist(x, y));
            if d == 0.0 {
                return;
            }
            self.exponent * libm::pow(d, self.exponent - 2.0)
        };
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += scale * factor * (a - b);
        }
    }
}

/// Pairwise costs `‖xs_i − ys_j‖^exponent` as an `n×m` matrix.
pub fn cost_matrix(xs: &Tensor, ys: &Tensor, exponent: f64) -> Result<Tensor> {
    cost_matrix_with(xs, ys, &PowerCost::new(exponent)?)
}

pub(crate) fn cost_matrix_with(xs: &Tensor, ys: &Tensor, cost: &impl GroundCost) -> Result<Tensor> {
    let (n, d) = xs.dims2()?;
    let (m, d2) = ys.dims2()?;
    if d != d2 {
        return Err(shape_err("cost_matrix", xs.shape(), ys.shape()));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = cost.cost(xs.row(i), ys.row(j));
        }
    }
    Tensor::new(&[n, m], out)
}

/// Two discrete measures, the cost between their atoms, the entropic weight
/// `ε` and the iteration cap.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    source_weights: Vec<f64>,
    target_weights: Vec<f64>,
    cost: Tensor,
    epsilon: f64,
    max_iters: usize,
}

impl TransportProblem {
    pub fn new(
        source_weights: Vec<f64>,
        target_weights: Vec<f64>,
        cost: Tensor,
        epsilon: f64,
        max_iters: usize,
    ) -> Result<Self> {
        let (n, m) = cost.dims2()?;
        if source_weights.len() != n || target_weights.len() != m {
            return Err(shape_err(
                "transport problem",
                &[source_weights.len(), target_weights.len()],
                &[n, m],
            ));
        }
        check_simplex(&source_weights, "source")?;
        check_simplex(&target_weights, "target")?;
        if cost.data().iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidProblem("negative cost entry".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if max_iters == 0 {
            return Err(Error::InvalidProblem("max_iters must be at least 1".into()));
        }
        Ok(Self {
            source_weights,
            target_weights,
            cost,
            epsilon,
            max_iters,
        })
    }

    /// Uniform weights on both sides.
    pub fn uniform(cost: Tensor, epsilon: f64, max_iters: usize) -> Result<Self> {
        let (n, m) = cost.dims2()?;
        Self::new(uniform(n), uniform(m), cost, epsilon, max_iters)
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    pub fn target_weights(&self) -> &[f64] {
        &self.target_weights
    }

    pub fn cost(&self) -> &Tensor {
        &self.cost
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.source_weights.len(), self.target_weights.len())
    }
}

pub(crate) fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_simplex(w: &[f64], side: &str) -> Result<()> {
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidProblem(format!(
            "{side} weights must be finite and nonnegative"
        )));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidProblem(format!(
            "{side} weights sum to {s}, not 1"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn single_pair() {
        let c = cost_matrix(
            &Tensor::scalar(0.0).reshape(&[1, 1]).unwrap(),
            &Tensor::full(&[1, 1], 3.0),
            2.0,
        )
        .unwrap();
        assert_eq!(c.data(), &[9.0]);
    }

    #[test]
    fn same_cloud_is_symmetric_with_zero_diagonal() {
        let xs = Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap();
        let c = cost_matrix(&xs, &xs, 1.0).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_pairwise_loop() {
        let mut r = rng::stream(1, 31);
        let xs = Tensor::randn(&[3, 2], &mut r);
        let ys = Tensor::randn(&[4, 2], &mut r);
        let c = cost_matrix(&xs, &ys, 1.5).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let dx = xs.at(i, 0) - ys.at(j, 0);
                let dy = xs.at(i, 1) - ys.at(j, 1);
                let want = (dx * dx + dy * dy).sqrt().powf(1.5);
                assert!((c.at(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_dims_and_bad_exponent() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(cost_matrix(&a, &b, 2.0), Err(Error::Shape { .. })));
        assert!(matches!(
            cost_matrix(&a, &a, 2.5),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn rejects_invalid_problems() {
        let c = Tensor::ones(&[2, 2]);
        assert!(TransportProblem::new(vec![0.6, 0.6], vec![0.5, 0.5], c.clone(), 1.0, 10).is_err());
        assert!(TransportProblem::uniform(c.clone(), 0.0, 10).is_err());
        assert!(TransportProblem::uniform(c.scale(-1.0), 1.0, 10).is_err());
        assert!(TransportProblem::uniform(c, 1.0, 10).is_ok());
    }
}
