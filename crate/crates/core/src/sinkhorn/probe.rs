use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::rng;
use crate::sinkhorn::divergence::{divergence_with_gradient, DivergenceConfig, STALE_LIMIT};

const PROBE_STREAM: u64 = 0x5052_4f42;

/// A differentiable map from a parameter vector to a point cloud.
pub trait PointFamily {
    fn dim(&self) -> usize;

    /// The cloud at `theta`, one atom per row.
    fn points(&self, theta: &[f64]) -> Tensor;

    /// Pulls a gradient with respect to the points back to `theta`.
    fn pullback(&self, theta: &[f64], grad_points: &Tensor) -> Vec<f64>;
}

/// `x_i(θ) = base_i + θ`.
#[derive(Clone, Debug)]
pub struct Translation {
    pub base: Tensor,
}

impl PointFamily for Translation {
    fn dim(&self) -> usize {
        self.base.shape()[1]
    }

    fn points(&self, theta: &[f64]) -> Tensor {
        let d = self.dim();
        let mut out = self.base.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (x, t) in row.iter_mut().zip(theta) {
                *x += t;
            }
        }
        out
    }

    fn pullback(&self, _theta: &[f64], grad_points: &Tensor) -> Vec<f64> {
        let d = self.dim();
        let mut g = alloc::vec![0.0; d];
        for row in grad_points.data().chunks(d) {
            for (a, b) in g.iter_mut().zip(row) {
                *a += b;
            }
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Upper bound on `‖θ₁ − θ₂‖`.
    pub radius: f64,
    /// `θ₁` is drawn uniformly from `[−spread, spread]^dim`.
    pub spread: f64,
    pub max_iters: usize,
    pub exponent: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epsilons: alloc::vec![1e-3, 1e-1, 1e3],
            trials: 10,
            seed: 0,
            radius: 0.01,
            spread: 0.5,
            max_iters: 20_000,
            exponent: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub epsilon: f64,
    /// `max_trials ‖∇S(θ₁) − ∇S(θ₂)‖ / ‖θ₁ − θ₂‖`.
    pub lipschitz: f64,
    /// Worst marginal residual over all solves behind this row.
    pub max_residual: f64,
}

/// Empirical Lipschitz constant of `θ ↦ ∇_θ S(μ_θ, ν)` for each `ε`.
///
/// Trial `t` draws its `(θ₁, θ₂)` pair from its own stream of `seed`, so the
/// table is a pure function of the inputs. Solves that end with a marginal
/// residual above the staleness limit are reported as errors.
pub fn smoothness_probe(
    family: &impl PointFamily,
    target: &Tensor,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeRow>> {
    if cfg.trials == 0 {
        return Err(crate::error::contract(
            "smoothness probe needs at least one trial",
        ));
    }
    let dim = family.dim();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.trials)
        .map(|t| {
            let mut r = rng::stream(cfg.seed, rng::stream_id(PROBE_STREAM, t as u64));
            let box_ = Uniform::new_inclusive(-cfg.spread, cfg.spread).expect("finite spread");
            let theta1: Vec<f64> = (0..dim).map(|_| box_.sample(&mut r)).collect();
            let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = libm::sqrt(dir.iter().map(|x| x * x).sum::<f64>());
            let len = cfg.radius
                * Uniform::new_inclusive(0.1, 1.0)
                    .expect("valid")
                    .sample(&mut r);
            dir.iter_mut().for_each(|x| *x *= len / norm);
            let theta2 = theta1.iter().zip(&dir).map(|(a, b)| a + b).collect();
            (theta1, theta2)
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &epsilon in &cfg.epsilons {
        let div = DivergenceConfig::new(epsilon, cfg.max_iters, cfg.exponent);
        let mut worst_ratio: f64 = 0.0;
        let mut worst_residual: f64 = 0.0;
        let mut grad = |theta: &[f64]| -> Result<Vec<f64>> {
            let out = divergence_with_gradient(&family.points(theta), target, &[], &[], &div)?;
            for s in [&out.cross, &out.source_self, &out.target_self] {
                if s.marginal_residual > STALE_LIMIT {
                    return Err(Error::StaleSolution {
                        residual: s.marginal_residual,
                        limit: STALE_LIMIT,
                    });
                }
                worst_residual = worst_residual.max(s.marginal_residual);
            }
            Ok(family.pullback(theta, &out.grad_x))
        };
        for (t1, t2) in &pairs {
            let (g1, g2) = (grad(t1)?, grad(t2)?);
            let num = libm::sqrt(
                g1.iter()
                    .zip(&g2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
            let den = libm::sqrt(
                t1.iter()
                    .zip(t2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
            worst_ratio = worst_ratio.max(num / den);
        }
        rows.push(ProbeRow {
            epsilon,
            lipschitz: worst_ratio,
            max_residual: worst_residual,
        });
    }
    Ok(rows)
}
