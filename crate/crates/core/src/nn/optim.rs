use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::numerics::autodiff::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Optimises every parameter of `store`.
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Self::for_params(store, store.ids().collect(), config)
    }

    /// Optimises only `params`; other entries of the store are left alone.
    pub fn for_params(store: &ParamStore, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|&id| Tensor::zeros(store.get(id).shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
            params,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads` must hold one tensor per tracked parameter, in [`Adam::params`] order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(contract("one gradient per parameter is required"));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        for (((&id, g), m), v) in self
            .params
            .iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(crate::error::shape_err("adam", p.shape(), g.shape()));
            }
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *x -= lr * (*mi / c1) / (libm::sqrt(*vi / c2) + eps);
            }
        }
        Ok(())
    }
}
