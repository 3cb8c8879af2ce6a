//! Entropic OT solver benchmark against the exact LP optimum.

use std::time::Instant;

use rand::Rng as _;
use sinkgraph_core::rng::{stream, stream_id};
use sinkgraph_core::sinkhorn::{cost_matrix, solve_eot, TransportProblem, CONVERGENCE_TOL};
use sinkgraph_core::Tensor;

use crate::error::Result;
use crate::lp::transport_lp;
use crate::metrics::Table;
use crate::streams;

/// Largest problem side for which the LP oracle column is filled.
pub const LP_MAX_SIZE: usize = 8;
pub const ATOM_DIM: usize = 2;

/// A random transport problem: standard-normal atoms and weights drawn
/// uniformly from `[0.5, 1.5]` then normalised.
#[derive(Clone, Debug)]
pub struct RandomProblem {
    pub xs: Tensor,
    pub ys: Tensor,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl RandomProblem {
    pub fn draw(n: usize, m: usize, seed: u64, index: u64) -> Self {
        let mut r = stream(seed, stream_id(streams::OT_BENCH, index));
        let xs = Tensor::randn(&[n, ATOM_DIM], &mut r);
        let ys = Tensor::randn(&[m, ATOM_DIM], &mut r);
        let mut weights = |k: usize| {
            let w: Vec<f64> = (0..k).map(|_| r.random_range(0.5..1.5)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let mu = weights(n);
        let nu = weights(m);
        Self { xs, ys, mu, nu }
    }
}

#[derive(Clone, Debug)]
pub struct OtBenchConfig {
    pub sizes: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub max_iters: usize,
    pub exponent: f64,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl Default for OtBenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1, 2, 4, 6, 8, 16, 32],
            epsilons: vec![1e-3, 1e-2, 1e-1, 1.0],
            trials: 3,
            max_iters: 5000,
            exponent: 2.0,
            seed: 0,
            record_wall_time: false,
        }
    }
}

pub const OT_BENCH_HEADER: [&str; 10] = [
    "n",
    "epsilon",
    "trial",
    "iterations",
    "marginal_residual",
    "entropic_cost",
    "lp_cost",
    "rel_error",
    "converged",
    "wall_us",
];

/// One row per `(size, ε, trial)`. `lp_cost` and `rel_error` are empty above [`LP_MAX_SIZE`].
pub fn ot_bench(cfg: &OtBenchConfig) -> Result<Table> {
    let mut table = Table::new(&OT_BENCH_HEADER);
    for &n in &cfg.sizes {
        for &eps in &cfg.epsilons {
            for trial in 0..cfg.trials {
                // Every ε sees the same problems.
                let p = RandomProblem::draw(n, n, cfg.seed, (n * 1000 + trial) as u64);
                let cost = cost_matrix(&p.xs, &p.ys, cfg.exponent)?;
                let started = cfg.record_wall_time.then(Instant::now);
                let problem = TransportProblem::new(
                    p.mu.clone(),
                    p.nu.clone(),
                    cost.clone(),
                    eps,
                    cfg.max_iters,
                )?;
                let sol = solve_eot(&problem)?;
                let wall = started.map_or(0, |t| t.elapsed().as_micros() as u64);
                let (lp, err) = if n <= LP_MAX_SIZE {
                    let lp = transport_lp(&p.mu, &p.nu, &cost)?.value;
                    (
                        lp.to_string(),
                        relative_error(sol.cost_value, lp).to_string(),
                    )
                } else {
                    (String::new(), String::new())
                };
                table.push(vec![
                    n.to_string(),
                    eps.to_string(),
                    trial.to_string(),
                    sol.iterations_used.to_string(),
                    sol.marginal_residual.to_string(),
                    sol.cost_value.to_string(),
                    lp,
                    err,
                    (sol.marginal_residual <= CONVERGENCE_TOL).to_string(),
                    wall.to_string(),
                ]);
            }
        }
    }
    Ok(table)
}

/// `|a − b| / |b|`, or `|a|` when `b` is zero.
pub fn relative_error(approx: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        approx.abs()
    } else {
        (approx - exact).abs() / exact.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(t: &Table, name: &str) -> Vec<String> {
        let j = t.header.iter().position(|h| h == name).unwrap();
        t.rows.iter().map(|r| r[j].clone()).collect()
    }

    #[test]
    fn trivial_problem_has_zero_error() {
        let cfg = OtBenchConfig {
            sizes: vec![1],
            epsilons: vec![1e-3, 1.0],
            trials: 2,
            ..OtBenchConfig::default()
        };
        let t = ot_bench(&cfg).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(column(&t, "rel_error")
            .iter()
            .all(|e| e.parse::<f64>().unwrap() == 0.0));
    }

    #[test]
    fn size_six_within_two_percent_at_small_epsilon() {
        let cfg = OtBenchConfig {
            sizes: vec![6],
            epsilons: vec![1e-3],
            trials: 5,
            ..OtBenchConfig::default()
        };
        let t = ot_bench(&cfg).unwrap();
        for e in column(&t, "rel_error") {
            assert!(e.parse::<f64>().unwrap() <= 0.02, "{e}");
        }
    }

    #[test]
    fn repeated_seed_is_identical_and_large_sizes_skip_lp() {
        let cfg = OtBenchConfig {
            sizes: vec![3, 9],
            epsilons: vec![0.1],
            trials: 1,
            ..OtBenchConfig::default()
        };
        let a = ot_bench(&cfg).unwrap().to_bytes().unwrap();
        assert_eq!(a, ot_bench(&cfg).unwrap().to_bytes().unwrap());
        let t = ot_bench(&cfg).unwrap();
        assert_eq!(column(&t, "lp_cost")[1], "");
    }

    #[test]
    fn weights_are_normalised() {
        let p = RandomProblem::draw(5, 3, 1, 0);
        assert!((p.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.xs.shape(), &[5, 2]);
    }
}
