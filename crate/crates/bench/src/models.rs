//! Networks of the denoising experiment.

use sinkgraph_core::fsgt::{AttentionSpec, Dmrb, ForwardCtx, Htb, MultiHeadFsga};
use sinkgraph_core::nn::{Conv2d, Linear, LEAKY_SLOPE};
use sinkgraph_core::numerics::linalg::spectral_norm;
use sinkgraph_core::rng::Rng;
use sinkgraph_core::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::config::{ExperimentConfig, GeneratorKind};
use crate::error::Result;

const HTB_PATCH: usize = 4;
const HTB_HEADS: usize = 2;
const HTB_MODEL_DIM: usize = 8;
const HTB_RCBS: usize = 1;

/// Conv autoencoder: two 3×3 encoder and two 3×3 decoder convolutions with
/// leaky ReLU between them and a sigmoid output, optionally with one HTB at
/// the bottleneck.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub convs: [Conv2d; 4],
    pub htb: Option<Htb>,
}

impl Denoiser {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig, rng: &mut Rng) -> Result<Self> {
        let (w1, w2) = cfg.widths;
        let enc0 = Conv2d::new(store, "g.enc0", 1, w1, 3, rng);
        let enc1 = Conv2d::new(store, "g.enc1", w1, w2, 3, rng);
        let htb = match cfg.generator {
            GeneratorKind::Conv => None,
            GeneratorKind::Htb => {
                let spec = AttentionSpec::dynamic(
                    HTB_PATCH,
                    HTB_PATCH,
                    w2,
                    HTB_HEADS,
                    HTB_MODEL_DIM,
                    cfg.side,
                    cfg.side,
                )?;
                let dmrb = Dmrb::new(store, "g.htb.dmrb", w2, HTB_RCBS, rng);
                let attention =
                    MultiHeadFsga::new(store, "g.htb.attn", spec, cfg.side, cfg.side, rng)?;
                Some(Htb { dmrb, attention })
            }
        };
        let dec0 = Conv2d::new(store, "g.dec0", w2, w1, 3, rng);
        let dec1 = Conv2d::new(store, "g.dec1", w1, 1, 3, rng);
        Ok(Self {
            convs: [enc0, enc1, dec0, dec1],
            htb,
        })
    }

    /// Parameters updated by the optimizer. The similarity weights inside the
    /// HTB are excluded because no gradient flows through the eigenvectors.
    pub fn trainable(&self, store: &ParamStore) -> Vec<ParamId> {
        let frozen = self
            .htb
            .as_ref()
            .map(|h| h.attention.graph_params())
            .unwrap_or_default();
        self.ids(store)
            .into_iter()
            .filter(|id| !frozen.contains(id))
            .collect()
    }

    fn ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store
            .ids()
            .filter(|&id| store.name(id).starts_with("g."))
            .collect()
    }

    /// Weights whose gradient spectral norms are logged, in layer order.
    pub fn logged_layers(&self) -> Vec<ParamId> {
        self.convs.iter().map(|c| c.weight).collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut ctx = ForwardCtx::default();
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, store, h)?;
            if i == 3 {
                return Ok(tape.sigmoid(h)?);
            }
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            if i == 1 {
                if let Some(htb) = &self.htb {
                    h = htb.forward(tape, store, h, &mut ctx)?;
                }
            }
        }
        unreachable!("the last convolution returns")
    }
}

/// Fully connected discriminator `side² → h1 → h2 → 1` with ReLU and a sigmoid output.
#[derive(Clone, Debug)]
pub struct MlpDiscriminator {
    pub layers: [Linear; 3],
}

impl MlpDiscriminator {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig, rng: &mut Rng) -> Self {
        let d = cfg.side * cfg.side;
        let (h1, h2) = cfg.disc_hidden;
        Self {
            layers: [
                Linear::new(store, "d.fc0", d, h1, rng),
                Linear::new(store, "d.fc1", h1, h2, rng),
                Linear::new(store, "d.fc2", h2, 1, rng),
            ],
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// `[B, 1, H, W]` images to `[B]` probabilities of being real.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let b = tape.shape(x)[0];
        let mut h = tape.reshape(x, &[b, self.layers[0].d_in])?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            h = if i < 2 {
                tape.relu(h)?
            } else {
                tape.sigmoid(h)?
            };
        }
        Ok(tape.reshape(h, &[b])?)
    }
}

/// Spectral norm of a convolution weight gradient viewed as `[c_out, c_in·k·k]`.
pub fn grad_spectral_norm(grad: &Tensor) -> Result<f64> {
    let rows = grad.shape().first().copied().unwrap_or(1);
    let m = grad.reshape(&[rows, grad.numel() / rows.max(1)])?;
    Ok(spectral_norm(&m)?)
}
