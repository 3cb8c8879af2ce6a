//! Frequency-selective attention heads.
//!
//! For node matrix `X` (`N×F`) a head computes
//! `Q = X Wq`, `K̂ = X̄ Wk` with `X̄ = P̄ P̄ᵀ X`, `V = X Wv` and returns
//! `softmax(Q K̂ᵀ / √d) V`. The key path is evaluated as `P̄ ((P̄ᵀ X) Wk)`, which
//! costs `(N−k)(N F + F d + N d)` multiplications instead of forming `X̄`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract, shape_err, Result};
use crate::fsgt::patch::{merge_on_tape, partition_on_tape};
use crate::fsgt::spec::AttentionSpec;
use crate::graph::SpectralGraph;
use crate::nn::Conv2d;
use crate::numerics::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::numerics::tensor::{MulCounter, Tensor};
use crate::rng::Rng;

/// Where the high-pass bases `P̄` come from during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum BasisMode {
    /// Eigendecompose every graph.
    #[default]
    Live,
    /// Eigendecompose and keep each basis in call order.
    Record,
    /// Reuse previously recorded bases in call order.
    Replay,
}

/// High-pass bases of one forward pass.
///
/// Replaying the bases recorded at a reference point makes the forward pass
/// match the stop-gradient backward pass exactly, which is what a
/// finite-difference check of the eigenvector-constant gradient needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectralBases {
    pub mode: BasisMode,
    stored: Vec<Tensor>,
    cursor: usize,
}

impl SpectralBases {
    pub fn live() -> Self {
        Self::default()
    }

    pub fn recording() -> Self {
        Self {
            mode: BasisMode::Record,
            ..Self::default()
        }
    }

    /// Replays the given bases in order.
    pub fn replaying(bases: Vec<Tensor>) -> Self {
        Self {
            mode: BasisMode::Replay,
            stored: bases,
            cursor: 0,
        }
    }

    /// Switches recorded bases to replay from the start.
    pub fn into_replay(self) -> Self {
        Self {
            mode: BasisMode::Replay,
            stored: self.stored,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    fn next(&mut self, compute: impl FnOnce() -> Result<Tensor>) -> Result<Tensor> {
        match self.mode {
            BasisMode::Live => compute(),
            BasisMode::Record => {
                let b = compute()?;
                self.stored.push(b.clone());
                Ok(b)
            }
            BasisMode::Replay => {
                let b =
                    self.stored.get(self.cursor).cloned().ok_or_else(|| {
                        contract("replayed more spectral bases than were recorded")
                    })?;
                self.cursor += 1;
                Ok(b)
            }
        }
    }
}

/// Per-pass state threaded through the networks.
#[derive(Clone, Debug, Default)]
pub struct ForwardCtx {
    pub bases: SpectralBases,
    /// Multiplications spent on attention key paths.
    pub key_mults: MulCounter,
}

/// Weights of one head as plain tensors: `w1`, `w2`, `wv` are `F×F`, `wq`, `wk` are `F×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub w1: Tensor,
    pub w2: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl HeadWeights {
    /// Entries `N(0, 1/F)`.
    pub fn random(f: usize, d: usize, rng: &mut Rng) -> Self {
        let s = 1.0 / libm::sqrt(f as f64);
        let mut draw = |c: usize| Tensor::randn(&[f, c], rng).scale(s);
        Self {
            w1: draw(f),
            w2: draw(f),
            wq: draw(d),
            wk: draw(d),
            wv: draw(f),
        }
    }

    /// All five matrices equal to `I_F` (so `d = F`).
    pub fn identity(f: usize) -> Self {
        let i = Tensor::eye(f);
        Self {
            w1: i.clone(),
            w2: i.clone(),
            wq: i.clone(),
            wk: i.clone(),
            wv: i,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w1: Var,
    pub w2: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

fn counted_matmul(tape: &mut Tape, a: Var, b: Var, counter: &mut MulCounter) -> Result<Var> {
    let (m, k) = (tape.shape(a)[0], tape.shape(a)[1]);
    let n = tape.shape(b)[1];
    let out = tape.matmul(a, b)?;
    counter.mults += (m * k * n) as u64;
    Ok(out)
}

/// One head on the tape. The graph, its eigenvectors and `P̄` are constants.
pub fn fsga_head_on_tape(
    tape: &mut Tape,
    x: Var,
    w: &HeadVars,
    k: usize,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let (n, f) = (tape.shape(x)[0], tape.shape(x)[1]);
    if tape.shape(w.wv) != [f, f] {
        return Err(shape_err("fsga value weights", tape.shape(w.wv), &[f, f]));
    }
    if k >= n {
        return Err(contract(format!("cutoff k = {k} must be below N = {n}")));
    }
    let d = tape.shape(w.wq)[1];
    let pbar = ctx.bases.next(|| {
        let g = SpectralGraph::new(tape.value(x), tape.value(w.w1), tape.value(w.w2))?;
        g.highpass_basis(k)
    })?;
    if pbar.shape() != [n, n - k] {
        return Err(shape_err("replayed basis", pbar.shape(), &[n, n - k]));
    }

    let q = tape.matmul(x, w.wq)?;
    let pt = tape.constant(pbar.transpose()?);
    let p = tape.constant(pbar);
    let coeffs = counted_matmul(tape, pt, x, &mut ctx.key_mults)?;
    let kc = counted_matmul(tape, coeffs, w.wk, &mut ctx.key_mults)?;
    let khat = counted_matmul(tape, p, kc, &mut ctx.key_mults)?;
    let v = tape.matmul(x, w.wv)?;

    let kt = tape.transpose(khat)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / libm::sqrt(d as f64))?;
    let attn = tape.softmax(scores)?;
    tape.matmul(attn, v)
}

/// [`fsga_head_on_tape`] on constant inputs.
pub fn fsga_head(x: &Tensor, w: &HeadWeights, k: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = HeadVars {
        w1: tape.constant(w.w1.clone()),
        w2: tape.constant(w.w2.clone()),
        wq: tape.constant(w.wq.clone()),
        wk: tape.constant(w.wk.clone()),
        wv: tape.constant(w.wv.clone()),
    };
    let out = fsga_head_on_tape(&mut tape, xv, &vars, k, &mut ForwardCtx::default())?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub w1: ParamId,
    pub w2: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl HeadParams {
    fn bind(&self, tape: &mut Tape, store: &ParamStore) -> HeadVars {
        HeadVars {
            w1: tape.param(store, self.w1),
            w2: tape.param(store, self.w2),
            wq: tape.param(store, self.wq),
            wk: tape.param(store, self.wk),
            wv: tape.param(store, self.wv),
        }
    }

    /// The similarity weights, which only shape the (constant) spectral basis.
    pub fn graph_params(&self) -> [ParamId; 2] {
        [self.w1, self.w2]
    }
}

/// `M` heads over the windows of a feature map, concatenated along channels
/// and projected back to `C` channels by a 1×1 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadFsga {
    pub spec: AttentionSpec,
    pub heads: Vec<HeadParams>,
    pub ffn: Conv2d,
    pub map_h: usize,
    pub map_w: usize,
}

impl MultiHeadFsga {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: AttentionSpec,
        map_h: usize,
        map_w: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        spec.validate(spec.num_nodes(map_h, map_w))?;
        let (f, d) = (spec.node_dim(), spec.model_dim);
        let heads = (0..spec.heads)
            .map(|j| {
                let w = HeadWeights::random(f, d, rng);
                HeadParams {
                    w1: store.add(format!("{name}.head{j}.w1"), w.w1),
                    w2: store.add(format!("{name}.head{j}.w2"), w.w2),
                    wq: store.add(format!("{name}.head{j}.wq"), w.wq),
                    wk: store.add(format!("{name}.head{j}.wk"), w.wk),
                    wv: store.add(format!("{name}.head{j}.wv"), w.wv),
                }
            })
            .collect();
        let ffn = Conv2d::new(
            store,
            &format!("{name}.ffn"),
            spec.heads * spec.channels,
            spec.channels,
            1,
            rng,
        );
        Ok(Self {
            spec,
            heads,
            ffn,
            map_h,
            map_w,
        })
    }

    /// Sets the 1×1 projection to zero, making the block's update vanish.
    pub fn zero_ffn(&self, store: &mut ParamStore) {
        for id in [self.ffn.weight, self.ffn.bias] {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape));
        }
    }

    /// Ids of the similarity weights of every head.
    pub fn graph_params(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(|h| h.graph_params()).collect()
    }

    /// Head outputs merged back to maps and concatenated: `[B, M·C, H, W]`.
    pub fn heads_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let &[batch, c, h, w] = tape.shape(x) else {
            return Err(shape_err(
                "multi-head fsga",
                tape.shape(x),
                &[0, self.spec.channels, 0, 0],
            ));
        };
        if c != self.spec.channels || h != self.map_h || w != self.map_w {
            return Err(shape_err(
                "multi-head fsga",
                tape.shape(x),
                &[batch, self.spec.channels, self.map_h, self.map_w],
            ));
        }
        let vars: Vec<HeadVars> = self.heads.iter().map(|p| p.bind(tape, store)).collect();
        let mut images = Vec::with_capacity(batch);
        for b in 0..batch {
            let nodes = partition_on_tape(tape, x, b, &self.spec)?;
            let mut maps = Vec::with_capacity(self.heads.len());
            for (hv, &k) in vars.iter().zip(&self.spec.head_cutoffs) {
                let out = fsga_head_on_tape(tape, nodes, hv, k, ctx)?;
                maps.push(merge_on_tape(tape, out, &self.spec, h, w)?);
            }
            images.push(tape.concat(&maps, 1)?);
        }
        tape.concat(&images, 0)
    }

    /// The residual update `FFN(concat_j head_j)`, shaped like `x`.
    pub fn forward_delta(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let cat = self.heads_forward(tape, store, x, ctx)?;
        self.ffn.forward(tape, store, cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsgt::patch::{patch_merge, patch_partition};
    use crate::numerics::gradcheck::{check_gradients, FD_STEP};
    use crate::rng;

    fn dense_attention(x: &Tensor, w: &HeadWeights) -> Tensor {
        let q = x.matmul(&w.wq).unwrap();
        let k = x.matmul(&w.wk).unwrap();
        let v = x.matmul(&w.wv).unwrap();
        let (n, d) = q.dims2().unwrap();
        let mut out = Tensor::zeros(&[n, v.shape()[1]]);
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|t| q.at(i, t) * k.at(j, t)).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v.shape()[1] {
                let val = (0..n).map(|j| e[j] / z * v.at(j, c)).sum();
                out.set(i, c, val);
            }
        }
        out
    }

    #[test]
    fn single_node_returns_values() {
        let mut r = rng::stream(0, 101);
        let x = Tensor::randn(&[1, 4], &mut r);
        let w = HeadWeights::random(4, 3, &mut r);
        let out = fsga_head(&x, &w, 0).unwrap();
        assert!(out.max_abs_diff(&x.matmul(&w.wv).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_nodes_give_zero_output() {
        let mut r = rng::stream(1, 101);
        let w = HeadWeights::random(4, 3, &mut r);
        assert_eq!(
            fsga_head(&Tensor::zeros(&[5, 4]), &w, 2).unwrap(),
            Tensor::zeros(&[5, 4])
        );
    }

    #[test]
    fn cutoff_zero_with_identities_is_dense_attention() {
        let mut r = rng::stream(2, 101);
        let x = Tensor::randn(&[4, 3], &mut r);
        let w = HeadWeights::identity(3);
        assert!(
            fsga_head(&x, &w, 0)
                .unwrap()
                .max_abs_diff(&dense_attention(&x, &w))
                <= 1e-9
        );
    }

    #[test]
    fn cutoff_zero_random_weights_is_dense_attention() {
        for seed in 0..10 {
            let mut r = rng::stream(seed, 102);
            let n = 1 + seed as usize % 8;
            let x = Tensor::randn(&[n, 5], &mut r);
            let w = HeadWeights::random(5, 3, &mut r);
            assert!(
                fsga_head(&x, &w, 0)
                    .unwrap()
                    .max_abs_diff(&dense_attention(&x, &w))
                    <= 1e-9
            );
        }
    }

    #[test]
    fn key_path_multiplications() {
        let mut r = rng::stream(3, 103);
        let (n, f, d, k) = (6, 4, 3, 2);
        let x = Tensor::randn(&[n, f], &mut r);
        let w = HeadWeights::random(f, d, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = HeadVars {
            w1: tape.constant(w.w1),
            w2: tape.constant(w.w2),
            wq: tape.constant(w.wq),
            wk: tape.constant(w.wk),
            wv: tape.constant(w.wv),
        };
        let mut ctx = ForwardCtx::default();
        fsga_head_on_tape(&mut tape, xv, &vars, k, &mut ctx).unwrap();
        assert_eq!(
            ctx.key_mults.mults,
            ((n - k) * (n * f + f * d + n * d)) as u64
        );
    }

    #[test]
    fn head_gradients_with_frozen_basis() {
        for seed in 0..5 {
            let mut r = rng::stream(seed, 104);
            let x = Tensor::randn(&[4, 3], &mut r);
            let w = HeadWeights::random(3, 2, &mut r);
            let mut rec = ForwardCtx {
                bases: SpectralBases::recording(),
                ..ForwardCtx::default()
            };
            let f = |t: &mut Tape, v: &[Var], ctx: &mut ForwardCtx| {
                let hv = HeadVars {
                    w1: v[1],
                    w2: v[2],
                    wq: v[3],
                    wk: v[4],
                    wv: v[5],
                };
                let o = fsga_head_on_tape(t, v[0], &hv, 1, ctx)?;
                let o = t.square(o)?;
                t.sum(o)
            };
            let inputs = [x, w.w1, w.w2, w.wq, w.wk, w.wv];
            {
                let mut t = Tape::new();
                let v: Vec<Var> = inputs.iter().map(|i| t.leaf(i.clone())).collect();
                f(&mut t, &v, &mut rec).unwrap();
            }
            let bases = rec.bases.into_replay();
            let rep = check_gradients(&inputs, FD_STEP, |t, v| {
                let mut ctx = ForwardCtx {
                    bases: bases.clone(),
                    ..ForwardCtx::default()
                };
                f(t, v, &mut ctx)
            })
            .unwrap();
            assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn two_heads_match_sequential_oracle() {
        let mut r = rng::stream(4, 105);
        let spec = AttentionSpec {
            patch_h: 2,
            patch_w: 2,
            channels: 2,
            heads: 2,
            head_cutoffs: alloc::vec![2, 3],
            model_dim: 3,
        };
        let mut store = ParamStore::new();
        let mh = MultiHeadFsga::new(&mut store, "a", spec.clone(), 4, 4, &mut r).unwrap();
        let x = Tensor::randn(&[1, 2, 4, 4], &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let cat = mh
            .heads_forward(&mut tape, &store, xv, &mut ForwardCtx::default())
            .unwrap();
        let cat = tape.value(cat).clone();

        let mut hwc = Tensor::zeros(&[4, 4, 2]);
        for ch in 0..2 {
            for p in 0..16 {
                hwc.data_mut()[p * 2 + ch] = x.data()[ch * 16 + p];
            }
        }
        let nodes = patch_partition(&hwc, &spec).unwrap();
        for (j, hp) in mh.heads.iter().enumerate() {
            let w = HeadWeights {
                w1: store.get(hp.w1).clone(),
                w2: store.get(hp.w2).clone(),
                wq: store.get(hp.wq).clone(),
                wk: store.get(hp.wk).clone(),
                wv: store.get(hp.wv).clone(),
            };
            let out = fsga_head(&nodes, &w, spec.head_cutoffs[j]).unwrap();
            let map = patch_merge(&out, &spec, (4, 4, 2)).unwrap();
            for ch in 0..2 {
                for p in 0..16 {
                    let got = cat.data()[(j * 2 + ch) * 16 + p];
                    assert!((got - map.data()[p * 2 + ch]).abs() <= 1e-9);
                }
            }
        }
    }
}
