//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Sweep cap for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Convergence when the off-diagonal Frobenius norm drops below this times `‖m‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Relative asymmetry accepted by [`sym_eig`], measured in the ∞-norm.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenpairs of a symmetric matrix: ascending eigenvalues and the orthogonal
/// matrix whose columns are the matching eigenvectors.
///
/// Each eigenvector's first non-negligible component is positive so the
/// decomposition is reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Tensor,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `P Λ Pᵀ`.
    pub fn reconstruct(&self) -> Tensor {
        let n = self.dim();
        let p = &self.eigenvectors;
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for (k, &lam) in self.eigenvalues.iter().enumerate() {
                    s += p.at(i, k) * lam * p.at(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Fails with [`Error::NotSymmetric`] when `‖m − mᵀ‖_∞ > 1e-9·‖m‖_∞` and with
/// [`Error::NoConvergence`] if 100 sweeps do not bring the off-diagonal mass
/// below `1e-12·‖m‖_F`.
pub fn sym_eig(m: &Tensor) -> Result<EigenDecomposition> {
    let (n, c) = m.dims2()?;
    if n != c {
        return Err(crate::error::shape_err("sym_eig", m.shape(), &[c, n]));
    }
    let asym = m.sub(&m.transpose()?)?.inf_norm()?;
    let allowed = SYMMETRY_TOL * m.inf_norm()?;
    if asym > allowed {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            allowed,
        });
    }

    // Work on the symmetrised copy so rounding in the input cannot bias the result.
    let mut a: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            a.push(0.5 * (m.at(i, j) + m.at(j, i)));
        }
    }
    let mut v = Tensor::eye(n).into_data();
    let norm = m.frobenius_norm();
    let tol = OFF_DIAGONAL_TOL * norm;

    let off = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        libm::sqrt(s)
    };

    let mut sweeps = 0;
    let mut residual = off(&a);
    while residual > tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, residual });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let cs = 1.0 / libm::sqrt(t * t + 1.0);
                let sn = t * cs;
                rotate(&mut a, n, p, q, cs, sn);
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
        sweeps += 1;
        residual = off(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        let lead = (0..n)
            .map(|k| v[k * n + src])
            .find(|x| x.abs() > 1e-10)
            .unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors.set(k, col, sign * v[k * n + src]);
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// `a ← Jᵀ a J` for the Givens rotation in the `(p, q)` plane.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
}
