//! Trainable layers over a [`ParamStore`] and the Adam optimizer.
//!
//! Layers only hold [`ParamId`]s; the values live in the store so that an
//! optimizer can update them between tapes.

mod optim;

pub use optim::{Adam, AdamConfig};

use alloc::format;

use crate::error::{shape_err, Result};
use crate::numerics::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;

/// Negative slope of every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Stride-1, size-preserving 2-D convolution with bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// Weights and bias uniform in `±1/√(c_in·k²)`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[c_out, c_in, kernel, kernel], fan_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform_init(&[c_out], fan_in, rng));
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[c_out, c_in, kernel, kernel]),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b))
    }
}

/// `y = x W + b` on `[batch, in]` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[d_in, d_out], d_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform_init(&[d_out], d_in, rng));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.d_in {
            return Err(shape_err("linear", tape.shape(x), &[self.d_in, self.d_out]));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row_bias(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_param_gradients, FD_STEP};
    use crate::rng;

    #[test]
    fn conv_and_linear_gradients() {
        for seed in 0..5 {
            let mut r = rng::stream(seed, 81);
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 3, 3, &mut r);
            let lin = Linear::new(&mut store, "l", 3 * 4 * 5, 2, &mut r);
            let x = Tensor::randn(&[2, 2, 4, 5], &mut r);
            let rep = check_param_gradients(&store, &[], FD_STEP, |t, s| {
                let xv = t.constant(x.clone());
                let h = conv.forward(t, s, xv)?;
                let h = t.leaky_relu(h, LEAKY_SLOPE)?;
                let h = t.reshape(h, &[2, 60])?;
                let o = lin.forward(t, s, h)?;
                let o = t.sigmoid(o)?;
                t.mean(o)
            })
            .unwrap();
            assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn init_bounds() {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 4, 2, 3, &mut rng::stream(0, 82));
        let bound = 1.0 / 6.0;
        assert!(store.get(conv.weight).max_abs() <= bound);
        assert_eq!(store.name(conv.bias), "c.bias");
    }
}
