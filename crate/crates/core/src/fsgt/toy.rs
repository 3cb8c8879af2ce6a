//! Small generator and discriminator built from HTBs and DMRBs.
//!
//! Neither network uses normalisation layers. The generator is two encoder
//! convolutions, a stack of HTBs and two decoder convolutions with a sigmoid
//! output. The discriminator is an encoder convolution, `t` DMRBs whose
//! activated outputs are the attention taps, and an MLP head with a sigmoid.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::fsgt::attention::{ForwardCtx, MultiHeadFsga};
use crate::fsgt::blocks::{Dmrb, Htb};
use crate::fsgt::dsa::{dsa_on_tape, gate_on_tape};
use crate::fsgt::spec::AttentionSpec;
use crate::nn::{Conv2d, Linear, LEAKY_SLOPE};
use crate::numerics::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub htbs: usize,
    pub rcbs: usize,
    pub patch: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub height: usize,
    pub image_width: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            width: 4,
            htbs: 2,
            rcbs: 2,
            patch: 4,
            heads: 2,
            model_dim: 8,
            height: 16,
            image_width: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FsgtGenerator {
    pub config: GeneratorConfig,
    pub encoder: [Conv2d; 2],
    pub htbs: Vec<Htb>,
    pub decoder: [Conv2d; 2],
}

impl FsgtGenerator {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: GeneratorConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let c = config.width;
        let encoder = [
            Conv2d::new(
                store,
                &format!("{name}.enc0"),
                config.in_channels,
                c,
                3,
                rng,
            ),
            Conv2d::new(store, &format!("{name}.enc1"), c, c, 3, rng),
        ];
        let spec = AttentionSpec::dynamic(
            config.patch,
            config.patch,
            c,
            config.heads,
            config.model_dim,
            config.height,
            config.image_width,
        )?;
        let mut htbs = Vec::with_capacity(config.htbs);
        for i in 0..config.htbs {
            let dmrb = Dmrb::new(store, &format!("{name}.htb{i}.dmrb"), c, config.rcbs, rng);
            let attention = MultiHeadFsga::new(
                store,
                &format!("{name}.htb{i}.attn"),
                spec.clone(),
                config.height,
                config.image_width,
                rng,
            )?;
            htbs.push(Htb { dmrb, attention });
        }
        let decoder = [
            Conv2d::new(store, &format!("{name}.dec0"), c, c, 3, rng),
            Conv2d::new(
                store,
                &format!("{name}.dec1"),
                c,
                config.out_channels,
                3,
                rng,
            ),
        ];
        Ok(Self {
            config,
            encoder,
            htbs,
            decoder,
        })
    }

    /// Similarity weights of every head; their gradient is cut at the eigenvectors.
    pub fn graph_params(&self) -> Vec<ParamId> {
        self.htbs
            .iter()
            .flat_map(|h| h.attention.graph_params())
            .collect()
    }

    /// `[B, in, H, W]` to `[B, out, H, W]` in `(0, 1)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let mut h = x;
        for conv in &self.encoder {
            h = conv.forward(tape, store, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        for htb in &self.htbs {
            h = htb.forward(tape, store, h, ctx)?;
        }
        h = self.decoder[0].forward(tape, store, h)?;
        h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        h = self.decoder[1].forward(tape, store, h)?;
        tape.sigmoid(h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub width: usize,
    pub dmrbs: usize,
    pub rcbs: usize,
    pub hidden: usize,
    pub height: usize,
    pub image_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            width: 4,
            dmrbs: 2,
            rcbs: 2,
            hidden: 32,
            height: 16,
            image_width: 16,
        }
    }
}

/// Output of a discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscriminatorPass {
    /// Probabilities `[B, 1]`.
    pub prob: Var,
    /// One activated feature map per DMRB.
    pub taps: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FsgtDiscriminator {
    pub config: DiscriminatorConfig,
    pub encoder: Conv2d,
    pub dmrbs: Vec<Dmrb>,
    pub head: [Linear; 2],
    pub gate_gain: ParamId,
    pub gate_bias: ParamId,
}

impl FsgtDiscriminator {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: DiscriminatorConfig,
        rng: &mut Rng,
    ) -> Self {
        let c = config.width;
        let encoder = Conv2d::new(store, &format!("{name}.enc"), config.in_channels, c, 3, rng);
        let dmrbs = (0..config.dmrbs)
            .map(|i| Dmrb::new(store, &format!("{name}.dmrb{i}"), c, config.rcbs, rng))
            .collect();
        let flat = c * config.height * config.image_width;
        let head = [
            Linear::new(store, &format!("{name}.fc0"), flat, config.hidden, rng),
            Linear::new(store, &format!("{name}.fc1"), config.hidden, 1, rng),
        ];
        let gate_gain = store.add(format!("{name}.gate.gain"), Tensor::ones(&[1]));
        let gate_bias = store.add(format!("{name}.gate.bias"), Tensor::zeros(&[1]));
        Self {
            config,
            encoder,
            dmrbs,
            head,
            gate_gain,
            gate_bias,
        }
    }

    pub fn num_taps(&self) -> usize {
        self.dmrbs.len()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<DiscriminatorPass> {
        let batch = match *tape.shape(x) {
            [b, c, h, w]
                if c == self.config.in_channels
                    && h == self.config.height
                    && w == self.config.image_width =>
            {
                b
            }
            ref s => {
                let want = [
                    0,
                    self.config.in_channels,
                    self.config.height,
                    self.config.image_width,
                ];
                return Err(shape_err("discriminator input", s, &want));
            }
        };
        let mut h = self.encoder.forward(tape, store, x)?;
        h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let mut taps = Vec::with_capacity(self.dmrbs.len());
        for block in &self.dmrbs {
            h = block.forward(tape, store, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            taps.push(h);
        }
        let flat_len = tape.value(h).numel() / batch;
        let mut z = tape.reshape(h, &[batch, flat_len])?;
        z = self.head[0].forward(tape, store, z)?;
        z = tape.leaky_relu(z, LEAKY_SLOPE)?;
        z = self.head[1].forward(tape, store, z)?;
        let prob = tape.sigmoid(z)?;
        Ok(DiscriminatorPass { prob, taps })
    }

    /// Normalised spatial attention of `x`: `[B, H·W]`.
    pub fn dsa_on_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let pass = self.forward(tape, store, x)?;
        dsa_on_tape(
            tape,
            &pass.taps,
            self.config.height,
            self.config.image_width,
        )
    }

    /// Plain-tensor spatial attention map: `[B, H, W]` in `[0, 1]`.
    pub fn dsa_map(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let m = self.dsa_on_tape(&mut tape, store, xv)?;
        let (h, w) = (self.config.height, self.config.image_width);
        tape.value(m).reshape(&[x.shape()[0], h, w])
    }

    /// The learnable sigmoid gate applied to a DSA map.
    pub fn gate(&self, tape: &mut Tape, store: &ParamStore, dsa: Var) -> Result<Var> {
        let gain = tape.param(store, self.gate_gain);
        let bias = tape.param(store, self.gate_bias);
        gate_on_tape(tape, dsa, gain, bias)
    }
}

/// Two-channel generator input `concat(x, x ⊙ gate)` for single-channel `x` and a `[B, H·W]` gate.
pub fn guided_input(tape: &mut Tape, x: Var, gate: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let g = tape.reshape(gate, &shape)?;
    let gated = tape.mul(x, g)?;
    tape.concat(&[x, gated], 1)
}
