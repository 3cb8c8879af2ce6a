//! Key-path multiplication counts of one attention head across cutoffs.

use sinkgraph_core::fsgt::{affine_fit, attention_complexity_bench, ComplexityRow};

use crate::error::{BenchError, Result};
use crate::metrics::Table;

#[derive(Clone, Debug, PartialEq)]
pub struct AttnBenchConfig {
    pub nodes: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub channels: usize,
    pub model_dim: usize,
    /// Cutoffs to run; empty means every `k` in `0..nodes`.
    pub cutoffs: Vec<usize>,
    pub seed: u64,
}

impl Default for AttnBenchConfig {
    fn default() -> Self {
        Self {
            nodes: 64,
            patch_h: 7,
            patch_w: 7,
            channels: 8,
            model_dim: 8,
            cutoffs: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttnBenchOutput {
    pub rows: Vec<ComplexityRow>,
    /// Least-squares fit of key multiplications against `N − k`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn attn_bench(cfg: &AttnBenchConfig) -> Result<AttnBenchOutput> {
    let ks: Vec<usize> = if cfg.cutoffs.is_empty() {
        (0..cfg.nodes).collect()
    } else {
        cfg.cutoffs.clone()
    };
    if let Some(&k) = ks.iter().find(|&&k| k >= cfg.nodes) {
        return Err(BenchError::Setup(format!(
            "cutoff {k} must be below the node count {}",
            cfg.nodes
        )));
    }
    let rows = attention_complexity_bench(
        cfg.nodes,
        cfg.patch_h,
        cfg.patch_w,
        cfg.channels,
        &ks,
        cfg.model_dim,
        cfg.seed,
    )?;
    let xs: Vec<f64> = rows.iter().map(|r| (cfg.nodes - r.k) as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.key_mults as f64).collect();
    let (slope, intercept, r2) = affine_fit(&xs, &ys)?;
    Ok(AttnBenchOutput {
        rows,
        slope,
        intercept,
        r2,
    })
}

impl AttnBenchOutput {
    pub fn table(&self, nodes: usize) -> Table {
        let mut t = Table::new(&["k", "n_minus_k", "key_mults", "dense_mults"]);
        for r in &self.rows {
            t.push(vec![
                r.k.to_string(),
                (nodes - r.k).to_string(),
                r.key_mults.to_string(),
                r.dense_mults.to_string(),
            ]);
        }
        t
    }

    pub fn fit_table(&self) -> Table {
        let mut t = Table::new(&["slope", "intercept", "r2"]);
        t.push(vec![
            self.slope.to_string(),
            self.intercept.to_string(),
            self.r2.to_string(),
        ]);
        t
    }

    pub fn mults_at(&self, k: usize) -> Option<u64> {
        self.rows.iter().find(|r| r.k == k).map(|r| r.key_mults)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_is_affine_in_remaining_nodes() {
        let cfg = AttnBenchConfig {
            nodes: 8,
            patch_h: 2,
            patch_w: 2,
            channels: 2,
            model_dim: 3,
            ..AttnBenchConfig::default()
        };
        let out = attn_bench(&cfg).unwrap();
        assert_eq!(out.rows.len(), 8);
        assert!(out.r2 > 0.999999);
        // Each remaining node costs N·F + F·d + N·d multiplications.
        assert!((out.slope - (8.0 * 8.0 + 8.0 * 3.0 + 8.0 * 3.0)).abs() < 1e-6);
        assert_eq!(out.table(8).rows.len(), 8);
    }

    #[test]
    fn cutoff_out_of_range() {
        let cfg = AttnBenchConfig {
            nodes: 4,
            cutoffs: vec![4],
            ..AttnBenchConfig::default()
        };
        assert!(matches!(attn_bench(&cfg), Err(BenchError::Setup(_))));
    }
}
