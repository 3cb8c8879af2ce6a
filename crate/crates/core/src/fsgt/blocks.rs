//! Dense residual blocks and the hybrid transformer block.

use alloc::format;
use alloc::vec::Vec;

use crate::error::Result;
use crate::fsgt::attention::{ForwardCtx, MultiHeadFsga};
use crate::nn::{Conv2d, LEAKY_SLOPE};
use crate::numerics::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::rng::Rng;

/// Densely connected residual convolution blocks (RCBs) with an outer skip.
///
/// RCB `i` reads a 1×1 fusion of the block input and every earlier RCB output,
/// computes `conv₂(lrelu(conv₁(u))) + u`, and the block returns the last RCB
/// output plus the block input.
#[derive(Clone, Debug, PartialEq)]
pub struct Dmrb {
    pub channels: usize,
    pub fusions: Vec<Conv2d>,
    pub rcbs: Vec<(Conv2d, Conv2d)>,
}

impl Dmrb {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rcbs: usize,
        rng: &mut Rng,
    ) -> Self {
        let c = channels;
        let fusions = (0..rcbs)
            .map(|i| Conv2d::new(store, &format!("{name}.fuse{i}"), (i + 1) * c, c, 1, rng))
            .collect();
        let rcbs = (0..rcbs)
            .map(|i| {
                (
                    Conv2d::new(store, &format!("{name}.rcb{i}.conv1"), c, c, 3, rng),
                    Conv2d::new(store, &format!("{name}.rcb{i}.conv2"), c, c, 3, rng),
                )
            })
            .collect();
        Self {
            channels,
            fusions,
            rcbs,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let convs = self
            .fusions
            .iter()
            .chain(self.rcbs.iter().flat_map(|(a, b)| [a, b]));
        convs.flat_map(|c| [c.weight, c.bias]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut feats = Vec::with_capacity(self.rcbs.len() + 1);
        feats.push(x);
        for (fuse, (c1, c2)) in self.fusions.iter().zip(&self.rcbs) {
            let dense = if feats.len() == 1 {
                x
            } else {
                tape.concat(&feats, 1)?
            };
            let u = fuse.forward(tape, store, dense)?;
            let h = c1.forward(tape, store, u)?;
            let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            let h = c2.forward(tape, store, h)?;
            feats.push(tape.add(h, u)?);
        }
        let last = *feats.last().expect("input is always present");
        if feats.len() == 1 {
            return Ok(x);
        }
        tape.add(last, x)
    }
}

/// `HTB(x) = x + MHFSGA(DMRB(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Htb {
    pub dmrb: Dmrb,
    pub attention: MultiHeadFsga,
}

impl Htb {
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let local = self.dmrb.forward(tape, store, x)?;
        let delta = self.attention.forward_delta(tape, store, local, ctx)?;
        tape.add(x, delta)
    }
}
