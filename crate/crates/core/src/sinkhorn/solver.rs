use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::linalg::cholesky_solve;
use crate::numerics::tensor::Tensor;
use crate::sinkhorn::problem::TransportProblem;

/// Marginal residual at which the convergence rule stops iterating.
pub const CONVERGENCE_TOL: f64 = 1e-12;

/// When to stop the alternating updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Stop once the marginal residual is at most `tol`, or at `max_iters`.
    Converge { tol: f64 },
    /// Run exactly `max_iters` iterations without checking the residual.
    Fixed,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Converge {
            tol: CONVERGENCE_TOL,
        }
    }
}

/// Dual potentials, optimal coupling and entropic cost of a [`TransportProblem`].
#[derive(Clone, Debug, PartialEq)]
pub struct TransportSolution {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub coupling: Tensor,
    /// `Σ π C + ε Σ π log(π / (μ ⊗ ν))`.
    pub cost_value: f64,
    pub iterations_used: usize,
    /// `max(‖π1 − μ‖_∞, ‖πᵀ1 − ν‖_∞)` of the returned coupling.
    pub marginal_residual: f64,
}

/// Solves with [`StopRule::Converge`] at [`CONVERGENCE_TOL`].
pub fn solve_eot(p: &TransportProblem) -> Result<TransportSolution> {
    solve_eot_with(p, StopRule::default())
}

/// Log-sum-exp over terms with positive weight; `-inf` entries are skipped.
fn lse(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(terms.map(|t| libm::exp(t - m)).sum::<f64>())
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|&x| {
            if x > 0.0 {
                libm::log(x)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Ratio between successive regularisation levels of the annealing schedule.
const ANNEAL_FACTOR: f64 = 0.5;
/// Marginal residual at which an intermediate annealing level hands over.
const ANNEAL_TOL: f64 = 1e-5;

/// `ε` levels above the target, largest first, starting near the cost range.
///
/// Plain iterations from zero potentials contract very slowly when `C/ε` is
/// large; warm starts from coarser levels reach the same fixed point in far
/// fewer iterations.
fn anneal_levels(c: &[f64], eps: f64) -> Vec<f64> {
    let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut levels = Vec::new();
    let mut e = (hi - lo) * ANNEAL_FACTOR;
    while e > eps {
        levels.push(e);
        e *= ANNEAL_FACTOR;
    }
    levels
}

/// Target-level sweeps between Newton steps.
const NEWTON_EVERY: usize = 8;
const LINE_SEARCH_HALVINGS: usize = 40;

/// Entropic dual objective `⟨φ, μ⟩ + ⟨ψ, ν⟩ − ε Σ μ_i ν_j exp((φ_i + ψ_j − C_ij)/ε)`.
fn dual_value(phi: &[f64], psi: &[f64], c: &[f64], mu: &[f64], nu: &[f64], eps: f64) -> f64 {
    let m = psi.len();
    let mut v = 0.0;
    for (i, (&p, &w)) in phi.iter().zip(mu).enumerate() {
        if w == 0.0 {
            continue;
        }
        v += w * p;
        for j in 0..m {
            if nu[j] > 0.0 {
                v -= eps * w * nu[j] * libm::exp((p + psi[j] - c[i * m + j]) / eps);
            }
        }
    }
    v + nu
        .iter()
        .zip(psi)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, p)| w * p)
        .sum::<f64>()
}

/// One damped Newton ascent step on the dual over the atoms with positive
/// weight, with the last active `ψ` held fixed to remove the constant shift.
///
/// Plain sweeps contract slowly when the coupling splits into weakly linked
/// blocks; the Newton system couples all potentials at once. Returns whether
/// the step increased the dual.
fn newton_step(
    phi: &mut [f64],
    psi: &mut [f64],
    c: &[f64],
    mu: &[f64],
    nu: &[f64],
    eps: f64,
) -> bool {
    let m = psi.len();
    let rows: Vec<usize> = (0..phi.len()).filter(|&i| mu[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| nu[j] > 0.0).collect();
    let (nr, nc) = (rows.len(), cols.len());
    let size = nr + nc - 1;
    if size == 0 {
        return false;
    }
    let mut h = vec![0.0; size * size];
    let mut g = vec![0.0; size];
    for (a, &i) in rows.iter().enumerate() {
        g[a] = mu[i];
    }
    for (b, &j) in cols.iter().enumerate().take(nc - 1) {
        g[nr + b] = nu[j];
    }
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let pij = mu[i] * nu[j] * libm::exp((phi[i] + psi[j] - c[i * m + j]) / eps);
            g[a] -= pij;
            h[a * size + a] += pij / eps;
            if b + 1 < nc {
                let col = nr + b;
                g[col] -= pij;
                h[col * size + col] += pij / eps;
                h[a * size + col] = pij / eps;
                h[col * size + a] = pij / eps;
            }
        }
    }
    let max_diag = (0..size).map(|k| h[k * size + k]).fold(0.0, f64::max);
    for k in 0..size {
        h[k * size + k] += 1e-13 * max_diag;
    }
    if !cholesky_solve(&mut h, &mut g, size) {
        return false;
    }

    let before = dual_value(phi, psi, c, mu, nu, eps);
    let mut t = 1.0;
    for _ in 0..LINE_SEARCH_HALVINGS {
        let mut trial_phi = phi.to_vec();
        let mut trial_psi = psi.to_vec();
        for (a, &i) in rows.iter().enumerate() {
            trial_phi[i] += t * g[a];
        }
        for (b, &j) in cols.iter().enumerate().take(nc - 1) {
            trial_psi[j] += t * g[nr + b];
        }
        let after = dual_value(&trial_phi, &trial_psi, c, mu, nu, eps);
        if after > before {
            phi.copy_from_slice(&trial_phi);
            psi.copy_from_slice(&trial_psi);
            return true;
        }
        t *= 0.5;
    }
    false
}

/// One φ update followed by one ψ update at regularisation `eps`.
fn sweep(phi: &mut [f64], psi: &mut [f64], c: &[f64], log_mu: &[f64], log_nu: &[f64], eps: f64) {
    let (n, m) = (phi.len(), psi.len());
    for i in 0..n {
        let row = &c[i * m..(i + 1) * m];
        phi[i] = -eps * lse((0..m).map(|j| log_nu[j] + (psi[j] - row[j]) / eps));
    }
    for j in 0..m {
        psi[j] = -eps * lse((0..n).map(|i| log_mu[i] + (phi[i] - c[i * m + j]) / eps));
    }
}

fn check_potentials(phi: &[f64], psi: &[f64], iteration: usize) -> Result<()> {
    if phi.iter().chain(psi).any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            context: "sinkhorn potentials",
            iteration,
        });
    }
    Ok(())
}

/// Solves `p` in the log domain.
///
/// [`StopRule::Fixed`] runs exactly `max_iters` sweeps at the problem's `ε`
/// from zero potentials. [`StopRule::Converge`] first anneals `ε` down from the
/// cost range with warm starts, then iterates at the target `ε`, inserting a
/// Newton step every few sweeps, until the residual tolerance. Every sweep and
/// Newton step counts against `max_iters`.
pub fn solve_eot_with(p: &TransportProblem, stop: StopRule) -> Result<TransportSolution> {
    let (n, m) = p.dims();
    let eps = p.epsilon();
    let c = p.cost().data();
    let (mu, nu) = (p.source_weights(), p.target_weights());
    let (log_mu, log_nu) = (log_weights(mu), log_weights(nu));
    let mut phi = vec![0.0; n];
    let mut psi = vec![0.0; m];

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    if let StopRule::Converge { tol } = stop {
        let levels = anneal_levels(c, eps);
        let stage_cap = (p.max_iters() / (4 * levels.len().max(1))).max(1);
        for &level in &levels {
            let level_p =
                TransportProblem::new(mu.to_vec(), nu.to_vec(), p.cost().clone(), level, 1)?;
            for _ in 0..stage_cap {
                // The last sweep always runs at the target level.
                if iterations + 1 >= p.max_iters() {
                    break;
                }
                sweep(&mut phi, &mut psi, c, &log_mu, &log_nu, level);
                iterations += 1;
                check_potentials(&phi, &psi, iterations)?;
                if row_residual(&phi, &psi, &level_p) <= ANNEAL_TOL.max(tol) {
                    break;
                }
            }
        }
        let mut since_newton = 0;
        while iterations < p.max_iters() {
            sweep(&mut phi, &mut psi, c, &log_mu, &log_nu, eps);
            iterations += 1;
            check_potentials(&phi, &psi, iterations)?;
            residual = row_residual(&phi, &psi, p);
            if residual <= tol {
                break;
            }
            since_newton += 1;
            // A sweep always follows a Newton step, so the columns stay exact.
            if since_newton == NEWTON_EVERY && iterations + 1 < p.max_iters() {
                newton_step(&mut phi, &mut psi, c, mu, nu, eps);
                iterations += 1;
                since_newton = 0;
            }
        }
    } else {
        while iterations < p.max_iters() {
            sweep(&mut phi, &mut psi, c, &log_mu, &log_nu, eps);
            iterations += 1;
            check_potentials(&phi, &psi, iterations)?;
        }
    }

    let mut coupling = vec![0.0; n * m];
    let mut cost_value = 0.0;
    for i in 0..n {
        for j in 0..m {
            if mu[i] == 0.0 || nu[j] == 0.0 {
                continue;
            }
            let cij = c[i * m + j];
            let log_ratio = (phi[i] + psi[j] - cij) / eps;
            let pij = mu[i] * nu[j] * libm::exp(log_ratio);
            coupling[i * m + j] = pij;
            if pij > 0.0 {
                cost_value += pij * cij + eps * pij * log_ratio;
            }
        }
    }
    let coupling = Tensor::new(&[n, m], coupling).map_err(|_| Error::NonFinite {
        context: "sinkhorn coupling",
        iteration: iterations,
    })?;
    if !cost_value.is_finite() {
        return Err(Error::NonFinite {
            context: "sinkhorn cost",
            iteration: iterations,
        });
    }
    if matches!(stop, StopRule::Fixed) || residual.is_infinite() {
        residual = marginal_residual(&coupling, mu, nu);
    } else {
        residual = residual.max(marginal_residual(&coupling, mu, nu));
    }
    Ok(TransportSolution {
        phi,
        psi,
        coupling,
        cost_value,
        iterations_used: iterations,
        marginal_residual: residual,
    })
}

/// After a ψ update the column marginals are exact, so only rows can be off.
fn row_residual(phi: &[f64], psi: &[f64], p: &TransportProblem) -> f64 {
    let (n, m) = p.dims();
    let eps = p.epsilon();
    let c = p.cost().data();
    let (mu, nu) = (p.source_weights(), p.target_weights());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..m {
            s += mu[i] * nu[j] * libm::exp((phi[i] + psi[j] - c[i * m + j]) / eps);
        }
        worst = worst.max((s - mu[i]).abs());
    }
    worst
}

pub(crate) fn marginal_residual(coupling: &Tensor, mu: &[f64], nu: &[f64]) -> f64 {
    let m = nu.len();
    let mut worst: f64 = 0.0;
    let mut cols = vec![0.0; m];
    for (i, &w) in mu.iter().enumerate() {
        let row = coupling.row(i);
        worst = worst.max((row.iter().sum::<f64>() - w).abs());
        for (c, v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    for (c, w) in cols.iter().zip(nu) {
        worst = worst.max((c - w).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sinkhorn::problem::cost_matrix;

    /// Minimum over permutations; for uniform weights with `n = m` an optimal
    /// plan of the linear program sits at a permutation matrix.
    fn permutation_oracle(c: &Tensor) -> f64 {
        fn rec(c: &Tensor, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = used.len();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(c, row + 1, used, acc + c.at(row, j), best);
                    used[j] = false;
                }
            }
        }
        let n = c.shape()[0];
        let mut best = f64::INFINITY;
        rec(c, 0, &mut vec![false; n], 0.0, &mut best);
        best / n as f64
    }

    #[test]
    fn single_atom() {
        for eps in [1e-3, 1.0, 1e3] {
            let p = TransportProblem::uniform(Tensor::ones(&[1, 1]), eps, 50).unwrap();
            let s = solve_eot(&p).unwrap();
            assert!((s.coupling.item() - 1.0).abs() < 1e-12);
            assert!((s.cost_value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_swap() {
        let c = Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let p = TransportProblem::uniform(c, 0.01, 1000).unwrap();
        let s = solve_eot(&p).unwrap();
        // LP optimum is 0; the entropic value adds ε·log 2 ≈ 0.0069.
        assert!(s.cost_value.abs() <= 0.02, "{}", s.cost_value);
        assert!(s.coupling.at(0, 0) + s.coupling.at(1, 1) >= 0.98);
    }

    #[test]
    fn five_point_small_epsilon_matches_permutation_oracle() {
        for seed in 0..5 {
            let mut r = rng::stream(seed, 41);
            let xs = Tensor::randn(&[5, 2], &mut r);
            let ys = Tensor::randn(&[5, 2], &mut r);
            let c = cost_matrix(&xs, &ys, 2.0).unwrap();
            let lp = permutation_oracle(&c);
            let s = solve_eot(&TransportProblem::uniform(c, 1e-3, 5000).unwrap()).unwrap();
            assert!(
                (s.cost_value - lp).abs() <= 0.02 * lp,
                "seed {seed}: {} vs {lp}",
                s.cost_value
            );
        }
    }

    #[test]
    fn coupling_has_potential_form_and_reports_residual() {
        let mut r = rng::stream(2, 42);
        let c = Tensor::rand_uniform(&[4, 6], 0.0, 2.0, &mut r);
        let p = TransportProblem::uniform(c.clone(), 0.1, 2000).unwrap();
        let s = solve_eot(&p).unwrap();
        assert!(s.marginal_residual <= CONVERGENCE_TOL);
        for i in 0..4 {
            for j in 0..6 {
                let want = (1.0 / 24.0) * ((s.phi[i] + s.psi[j] - c.at(i, j)) / 0.1).exp();
                assert!((s.coupling.at(i, j) - want).abs() <= 1e-9);
            }
        }
        assert!(
            (marginal_residual(&s.coupling, p.source_weights(), p.target_weights())
                - s.marginal_residual)
                .abs()
                <= 1e-15
        );
    }

    #[test]
    fn fixed_rule_runs_exactly_max_iters() {
        let c = Tensor::from_rows(&[&[0.0, 1.0], &[2.0, 0.5]]).unwrap();
        let p = TransportProblem::uniform(c, 0.1, 10).unwrap();
        let s = solve_eot_with(&p, StopRule::Fixed).unwrap();
        assert_eq!(s.iterations_used, 10);
        assert!(s.marginal_residual.is_finite());
    }

    #[test]
    fn tiny_epsilon_does_not_underflow() {
        let c = Tensor::from_rows(&[&[5.0, 9.0], &[7.0, 3.0]]).unwrap();
        let s = solve_eot(&TransportProblem::uniform(c, 1e-6, 100).unwrap()).unwrap();
        assert!((s.cost_value - 4.0).abs() < 1e-4);
    }

    #[test]
    fn zero_weight_atoms_are_ignored() {
        let c = Tensor::from_rows(&[&[0.0, 4.0], &[4.0, 1.0]]).unwrap();
        let p = TransportProblem::new(vec![1.0, 0.0], vec![0.5, 0.5], c, 0.05, 500).unwrap();
        let s = solve_eot(&p).unwrap();
        assert_eq!(s.coupling.at(1, 0), 0.0);
        assert!((s.coupling.at(0, 1) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn clustered_self_transport_converges_quickly() {
        // Two tight pairs far apart: plain sweeps need tens of thousands of
        // iterations here.
        let xs = Tensor::from_rows(&[&[0.0, 0.0], &[0.5, 0.0], &[3.0, 1.0], &[3.0, 1.4]]).unwrap();
        let c = cost_matrix(&xs, &xs, 2.0).unwrap();
        let p = TransportProblem::uniform(c, 0.5, 200).unwrap();
        let s = solve_eot(&p).unwrap();
        assert!(
            s.marginal_residual <= CONVERGENCE_TOL,
            "{}",
            s.marginal_residual
        );
        assert!(s.iterations_used < 200);

        let plain = solve_eot_with(
            &TransportProblem::uniform(p.cost().clone(), 0.5, 200).unwrap(),
            StopRule::Fixed,
        )
        .unwrap();
        assert!((plain.cost_value - s.cost_value).abs() < 1e-3);
    }
}
