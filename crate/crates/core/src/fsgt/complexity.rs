//! Multiply counts of the attention key path as the cutoff varies.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::fsgt::attention::{fsga_head_on_tape, ForwardCtx, HeadVars, HeadWeights, SpectralBases};
use crate::graph::SpectralGraph;
use crate::numerics::tensor::Tensor;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityRow {
    pub k: usize,
    /// Multiplications the head spent on `P̄((P̄ᵀX)Wk)`.
    pub key_mults: u64,
    /// Multiplications for the same keys via the dense `N×N` filter: `(P̄P̄ᵀ)X Wk`.
    pub dense_mults: u64,
}

/// Runs one head with `N` random nodes of `h·w·c` features for every cutoff in `ks`.
///
/// The graph does not depend on `k`, so it is decomposed once and each run
/// replays its high-pass basis.
pub fn attention_complexity_bench(
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    ks: &[usize],
    model_dim: usize,
    seed: u64,
) -> Result<Vec<ComplexityRow>> {
    let f = h * w * c;
    if n == 0 || f == 0 || model_dim == 0 {
        return Err(contract("complexity bench sizes must be positive"));
    }
    let mut r = rng::stream(seed, rng::stream_id(7, 0));
    let x = Tensor::randn(&[n, f], &mut r);
    let weights = HeadWeights::random(f, model_dim, &mut r);
    let graph = SpectralGraph::new(&x, &weights.w1, &weights.w2)?;

    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let pbar = graph.highpass_basis(k)?;
        let mut ctx = ForwardCtx {
            bases: SpectralBases::replaying(vec![pbar]),
            ..ForwardCtx::default()
        };
        let mut tape = crate::numerics::autodiff::Tape::new();
        let xv = tape.constant(x.clone());
        let vars = HeadVars {
            w1: tape.constant(weights.w1.clone()),
            w2: tape.constant(weights.w2.clone()),
            wq: tape.constant(weights.wq.clone()),
            wk: tape.constant(weights.wk.clone()),
            wv: tape.constant(weights.wv.clone()),
        };
        fsga_head_on_tape(&mut tape, xv, &vars, k, &mut ctx)?;
        let (n64, r64, f64_, d64) = (n as u64, (n - k) as u64, f as u64, model_dim as u64);
        rows.push(ComplexityRow {
            k,
            key_mults: ctx.key_mults.mults,
            dense_mults: n64 * r64 * n64 + n64 * n64 * f64_ + n64 * f64_ * d64,
        });
    }
    Ok(rows)
}

/// Least-squares line `y ≈ slope·x + intercept` and its coefficient of determination.
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(contract("affine fit needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(contract("affine fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_the_factored_formula() {
        let (n, f, d) = (10u64, 2 * 2 * 3, 5u64);
        let rows = attention_complexity_bench(10, 2, 2, 3, &[0, 5, 9], 5, 3).unwrap();
        for row in rows {
            let r = n - row.k as u64;
            assert_eq!(row.key_mults, r * (n * f + f * d + n * d));
        }
    }

    #[test]
    fn last_cutoff_is_cheapest() {
        let ks: Vec<usize> = (4..8).collect();
        let rows = attention_complexity_bench(8, 1, 2, 2, &ks, 3, 0).unwrap();
        let min = rows.iter().map(|r| r.key_mults).min().unwrap();
        assert_eq!(rows.last().unwrap().key_mults, min);
    }

    #[test]
    fn doubling_channels_doubles_filtered_key_term() {
        let (n, k, d) = (6u64, 3usize, 2usize);
        let r = n - k as u64;
        let filtered = |c: usize| {
            let row = attention_complexity_bench(6, 1, 1, c, &[k], d, 0).unwrap()[0];
            row.key_mults - r * n * d as u64
        };
        assert_eq!(filtered(4), 2 * filtered(2));
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let (s, i, r2) = affine_fit(&xs, &ys).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && (i + 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
