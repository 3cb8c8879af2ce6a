//! Small dense helpers: power-iteration spectral norm, Cholesky solves and
//! bilinear resampling matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::numerics::tensor::Tensor;

pub const POWER_ITERS: usize = 50;
pub const POWER_TOL: f64 = 1e-9;

/// Largest singular value of a matrix by power iteration on `GᵀG`.
///
/// The start vector is fixed (`v_j ∝ 1 + j/n`) so the estimate is
/// deterministic. Stops after [`POWER_ITERS`] iterations or when successive
/// estimates differ by at most [`POWER_TOL`] relative. A zero matrix gives 0.
pub fn spectral_norm(g: &Tensor) -> Result<f64> {
    let (r, c) = g.dims2()?;
    if g.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let d = g.data();
    let mut v: Vec<f64> = (0..c).map(|j| 1.0 + j as f64 / c as f64).collect();
    normalize(&mut v);
    let mut u = vec![0.0; r];
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERS {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = d[i * c..(i + 1) * c]
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .sum();
        }
        let mut w = vec![0.0; c];
        for (i, &ui) in u.iter().enumerate() {
            for (wj, &a) in w.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                *wj += a * ui;
            }
        }
        // ‖Gv‖² = vᵀGᵀGv is the Rayleigh quotient of GᵀG at unit v.
        let next = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
        let norm_w = normalize(&mut w);
        let done = (next - sigma).abs() <= POWER_TOL * next;
        sigma = next;
        if done || norm_w == 0.0 {
            break;
        }
        v = w;
    }
    Ok(sigma)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Solves `A x = b` in place for a symmetric positive definite row-major
/// `n×n` matrix `a`, overwriting `a` with its Cholesky factor and `b` with `x`.
///
/// Returns `false` if a pivot is not positive.
pub fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    true
}

/// `[out_len × in_len]` matrix of half-pixel-centred linear interpolation weights.
///
/// Applying it on both sides (`R_h · X · R_wᵀ`) gives a bilinear resize; equal
/// lengths give the identity.
pub fn linear_resample_matrix(in_len: usize, out_len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[out_len, in_len]);
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = src as usize;
        let hi = (lo + 1).min(in_len - 1);
        let t = src - lo as f64;
        m.set(o, lo, m.at(o, lo) + 1.0 - t);
        m.set(o, hi, m.at(o, hi) + t);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_systems() {
        let mut r = rng::stream(9, 19);
        for n in 1..6 {
            let g = Tensor::randn(&[n, n], &mut r);
            let a = g
                .matmul(&g.transpose().unwrap())
                .unwrap()
                .add(&Tensor::eye(n))
                .unwrap();
            let x = Tensor::randn(&[n, 1], &mut r);
            let mut b = a.matmul(&x).unwrap().into_data();
            let mut f = a.data().to_vec();
            assert!(cholesky_solve(&mut f, &mut b, n));
            for (got, want) in b.iter().zip(x.data()) {
                assert!((got - want).abs() < 1e-10);
            }
        }
        let mut bad = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_solve(&mut bad, &mut [1.0, 1.0], 2));
    }
    use crate::numerics::eig::sym_eig;
    use crate::rng;

    #[test]
    fn diagonal() {
        assert!((spectral_norm(&Tensor::diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(spectral_norm(&Tensor::zeros(&[3, 2])).unwrap(), 0.0);
    }

    #[test]
    fn matches_eigen_oracle() {
        for seed in 0..20 {
            let g = Tensor::randn(&[5, 4], &mut rng::stream(seed, 21));
            let gtg = g.transpose().unwrap().matmul(&g).unwrap();
            let top = *sym_eig(&gtg).unwrap().eigenvalues.last().unwrap();
            let want = libm::sqrt(top);
            let got = spectral_norm(&g).unwrap();
            assert!(
                (got - want).abs() <= 1e-6 * want,
                "seed {seed}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn resample_identity_and_rows_sum_to_one() {
        assert_eq!(linear_resample_matrix(4, 4), Tensor::eye(4));
        let m = linear_resample_matrix(3, 7);
        for i in 0..7 {
            assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
