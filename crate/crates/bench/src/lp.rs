//! Exact references for transport costs: a dense two-phase simplex for the
//! Kantorovich linear program and the closed-form large-`ε` limit.

use sinkgraph_core::sinkhorn::cost_matrix;
use sinkgraph_core::Tensor;

use crate::error::{BenchError, Result};

const PIVOT_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, objective: &mut [f64], r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r && row[col] != 0.0 {
                let f = row[col];
                row.iter_mut()
                    .zip(&pivot_row)
                    .for_each(|(v, &pv)| *v -= f * pv);
            }
        }
        let f = objective[col];
        if f != 0.0 {
            objective
                .iter_mut()
                .zip(&pivot_row)
                .for_each(|(v, &pv)| *v -= f * pv);
        }
        self.basis[r] = col;
    }

    /// Minimises the objective row (reduced costs, last entry `−value`) over
    /// the first `allowed` columns with Bland's rule.
    fn optimise(&mut self, objective: &mut [f64], allowed: usize) -> Result<()> {
        let rhs = self.width - 1;
        for _ in 0..MAX_PIVOTS {
            let Some(col) = (0..allowed).find(|&j| objective[j] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut best: Option<(f64, usize)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[col] > PIVOT_TOL {
                    let ratio = row[rhs] / row[col];
                    let better = match best {
                        None => true,
                        Some((b, bi)) => {
                            ratio < b - PIVOT_TOL
                                || (ratio <= b + PIVOT_TOL && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((ratio, i));
                    }
                }
            }
            let Some((_, r)) = best else {
                return Err(BenchError::Setup("linear program is unbounded".into()));
            };
            self.pivot(objective, r, col);
        }
        Err(BenchError::Setup("simplex pivot limit reached".into()))
    }
}

/// `min cᵀx` subject to `A x = b`, `x ≥ 0`.
pub fn solve_standard_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpSolution> {
    let (m, n) = (a.len(), c.len());
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(BenchError::Setup("inconsistent LP dimensions".into()));
    }
    let width = n + m + 1;
    let mut rows = Vec::with_capacity(m);
    for (i, (row, &bi)) in a.iter().zip(b).enumerate() {
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r = vec![0.0; width];
        for (dst, &v) in r.iter_mut().zip(row) {
            *dst = sign * v;
        }
        r[n + i] = 1.0;
        r[width - 1] = sign * bi;
        rows.push(r);
    }
    let mut t = Tableau {
        rows,
        basis: (n..n + m).collect(),
        width,
    };

    // Phase 1: drive the artificial variables to zero.
    let mut phase1 = vec![0.0; width];
    for row in &t.rows {
        for j in 0..n {
            phase1[j] -= row[j];
        }
        phase1[width - 1] -= row[width - 1];
    }
    t.optimise(&mut phase1, n + m)?;
    let infeasibility = -phase1[width - 1];
    let scale = 1.0 + b.iter().map(|v| v.abs()).sum::<f64>();
    if infeasibility > 1e-9 * scale {
        return Err(BenchError::Setup(format!(
            "linear program is infeasible ({infeasibility:e})"
        )));
    }
    let mut r = 0;
    while r < t.rows.len() {
        if t.basis[r] >= n {
            match (0..n).find(|&j| t.rows[r][j].abs() > 1e-9) {
                Some(col) => t.pivot(&mut phase1, r, col),
                None => {
                    // Redundant constraint.
                    t.rows.remove(r);
                    t.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(c);
    for (row, &k) in t.rows.iter().zip(&t.basis) {
        let ck = phase2[k];
        if ck != 0.0 {
            phase2
                .iter_mut()
                .zip(row)
                .for_each(|(v, &rv)| *v -= ck * rv);
        }
    }
    t.optimise(&mut phase2, n)?;

    let mut x = vec![0.0; n];
    for (row, &k) in t.rows.iter().zip(&t.basis) {
        if k < n {
            x[k] = row[width - 1];
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { value, x })
}

/// Unregularised optimal transport cost `min ⟨π, C⟩` over couplings of `mu` and `nu`.
pub fn transport_lp(mu: &[f64], nu: &[f64], cost: &Tensor) -> Result<LpSolution> {
    let (n, m) = cost.dims2()?;
    if mu.len() != n || nu.len() != m {
        return Err(BenchError::Setup(
            "weights do not match the cost matrix".into(),
        ));
    }
    let mut a = Vec::with_capacity(n + m);
    for i in 0..n {
        let mut row = vec![0.0; n * m];
        row[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = 1.0);
        a.push(row);
    }
    for j in 0..m {
        let mut row = vec![0.0; n * m];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        a.push(row);
    }
    let b: Vec<f64> = mu.iter().chain(nu).copied().collect();
    solve_standard_lp(&a, &b, cost.data())
}

/// Large-`ε` limit of the debiased divergence:
/// `Σμν c(x, y) − ½ Σμμ' c(x, x') − ½ Σνν' c(y, y')`, the MMD with kernel `−c`.
pub fn energy_oracle(
    xs: &Tensor,
    ys: &Tensor,
    mu: &[f64],
    nu: &[f64],
    exponent: f64,
) -> Result<f64> {
    let mean = |a: &Tensor, b: &Tensor, wa: &[f64], wb: &[f64]| -> Result<f64> {
        let c = cost_matrix(a, b, exponent)?;
        let mut s = 0.0;
        for (i, &u) in wa.iter().enumerate() {
            for (j, &v) in wb.iter().enumerate() {
                s += u * v * c.at(i, j);
            }
        }
        Ok(s)
    };
    Ok(mean(xs, ys, mu, nu)? - 0.5 * mean(xs, xs, mu, mu)? - 0.5 * mean(ys, ys, nu, nu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sinkgraph_core::rng::stream;

    fn permutation_oracle(c: &Tensor) -> f64 {
        fn rec(c: &Tensor, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == used.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..used.len() {
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
    fn uniform_square_problems_match_permutations() {
        for seed in 0..20 {
            let mut r = stream(seed, 1);
            let n = 1 + seed as usize % 6;
            let c = Tensor::rand_uniform(&[n, n], 0.0, 1.0, &mut r);
            let w = vec![1.0 / n as f64; n];
            let lp = transport_lp(&w, &w, &c).unwrap();
            assert!(
                (lp.value - permutation_oracle(&c)).abs() < 1e-12,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn split_mass_example() {
        // Source mass 1 at one point must split evenly over two targets.
        let c = Tensor::from_rows(&[&[1.0, 3.0]]).unwrap();
        let lp = transport_lp(&[1.0], &[0.5, 0.5], &c).unwrap();
        assert!((lp.value - 2.0).abs() < 1e-12);
        assert_eq!(lp.x, vec![0.5, 0.5]);
    }

    #[test]
    fn unequal_weights_against_hand_solution() {
        // Greedy is optimal here: 0.6 → col 0 (cost 0), 0.4 → col 1 (cost 0) leaves 0.2 row-1 mass at cost 2.
        let c = Tensor::from_rows(&[&[0.0, 1.0], &[2.0, 0.0]]).unwrap();
        let lp = transport_lp(&[0.4, 0.6], &[0.6, 0.4], &c).unwrap();
        assert!((lp.value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn generic_lp_and_infeasibility() {
        // min −x − y s.t. x + y + s = 1.
        let lp = solve_standard_lp(&[vec![1.0, 1.0, 1.0]], &[1.0], &[-1.0, -1.0, 0.0]).unwrap();
        assert!((lp.value + 1.0).abs() < 1e-12);
        assert!(solve_standard_lp(&[vec![1.0], vec![1.0]], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn energy_oracle_of_identical_measures_is_zero() {
        let mut r = stream(3, 2);
        let x = Tensor::randn(&[4, 2], &mut r);
        let w = [0.25; 4];
        assert!(energy_oracle(&x, &x, &w, &w, 1.5).unwrap().abs() < 1e-12);
        let d0 = Tensor::zeros(&[1, 1]);
        let d1 = Tensor::ones(&[1, 1]);
        assert_eq!(energy_oracle(&d0, &d1, &[1.0], &[1.0], 2.0).unwrap(), 1.0);
    }
}
