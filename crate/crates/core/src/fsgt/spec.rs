use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// Cutoff of head `j` out of `m` for `n` nodes: evenly spread over
/// `⌊n/2⌋ ..= n − 1`.
pub fn dynamic_cutoffs(n: usize, m: usize) -> Vec<usize> {
    let lo = n / 2;
    let span = n.saturating_sub(1).saturating_sub(lo);
    (0..m)
        .map(|j| lo + j * span / (m.saturating_sub(1)).max(1))
        .collect()
}

/// Patch size, channel count, heads and their cutoffs for one attention block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub patch_h: usize,
    pub patch_w: usize,
    pub channels: usize,
    pub heads: usize,
    pub head_cutoffs: Vec<usize>,
    /// Query/key width `d` in the `1/√d` softmax scaling.
    pub model_dim: usize,
}

impl AttentionSpec {
    /// A spec whose cutoffs follow [`dynamic_cutoffs`] for a `map_h×map_w` feature map.
    pub fn dynamic(
        patch_h: usize,
        patch_w: usize,
        channels: usize,
        heads: usize,
        model_dim: usize,
        map_h: usize,
        map_w: usize,
    ) -> Result<Self> {
        let mut spec = Self {
            patch_h,
            patch_w,
            channels,
            heads,
            head_cutoffs: Vec::new(),
            model_dim,
        };
        let n = spec.num_nodes(map_h, map_w);
        spec.head_cutoffs = dynamic_cutoffs(n, heads);
        spec.validate(n)?;
        Ok(spec)
    }

    /// Feature length `h·w·c` of one node.
    pub fn node_dim(&self) -> usize {
        self.patch_h * self.patch_w * self.channels
    }

    /// Window grid `(rows, cols)` after zero-padding the map up to whole windows.
    pub fn grid(&self, map_h: usize, map_w: usize) -> (usize, usize) {
        (map_h.div_ceil(self.patch_h), map_w.div_ceil(self.patch_w))
    }

    pub fn num_nodes(&self, map_h: usize, map_w: usize) -> usize {
        let (gh, gw) = self.grid(map_h, map_w);
        gh * gw
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.patch_h == 0
            || self.patch_w == 0
            || self.channels == 0
            || self.heads == 0
            || self.model_dim == 0
        {
            return Err(contract("attention spec sizes must be positive"));
        }
        if self.head_cutoffs.len() != self.heads {
            return Err(contract(format!(
                "{} cutoffs for {} heads",
                self.head_cutoffs.len(),
                self.heads
            )));
        }
        if let Some(&k) = self.head_cutoffs.iter().find(|&&k| k >= n) {
            return Err(contract(format!("cutoff {k} must be below N = {n}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoffs_cover_the_upper_half() {
        assert_eq!(dynamic_cutoffs(64, 16).first(), Some(&32));
        assert_eq!(dynamic_cutoffs(64, 16).last(), Some(&63));
        assert_eq!(dynamic_cutoffs(16, 1), [8]);
        assert_eq!(dynamic_cutoffs(1, 3), [0, 0, 0]);
        for (n, m) in [(4, 2), (9, 4), (49, 16)] {
            let ks = dynamic_cutoffs(n, m);
            assert!(ks.windows(2).all(|w| w[0] <= w[1]));
            assert!(ks.iter().all(|&k| k >= n / 2 && k < n));
        }
    }

    #[test]
    fn padded_grid() {
        let s = AttentionSpec::dynamic(7, 7, 1, 2, 4, 16, 16).unwrap();
        assert_eq!(s.grid(16, 16), (3, 3));
        assert_eq!(s.head_cutoffs, [4, 8]);
        assert_eq!(s.node_dim(), 49);
    }
}
