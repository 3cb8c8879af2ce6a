//! Training objectives for the generator and the discriminator.
//!
//! Each loss has a tape form for training and a plain form returning `f64`.
//! Images are `[B, C, H, W]` tensors with values in `[0, 1]`.

use alloc::vec::Vec;
use core::cell::Cell;

use crate::error::{contract, shape_err, Error, Result};
use crate::numerics::autodiff::{evaluate, Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::sinkhorn::{divergence_with_gradient, DivergenceConfig};

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn same_shape(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(shape_err(op, tape.shape(a), tape.shape(b)));
    }
    Ok(())
}

fn scalar_of(t: Tensor) -> f64 {
    t.item()
}

/// Mean squared error.
pub fn mse_on_tape(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    same_shape(tape, pred, target, "mse")?;
    let d = tape.sub(pred, target)?;
    let d = tape.square(d)?;
    tape.mean(d)
}

pub fn pixel_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    evaluate(&[pred.clone(), target.clone()], |t, v| {
        mse_on_tape(t, v[0], v[1])
    })
    .map(scalar_of)
}

/// Mean squared difference of two attention maps.
pub fn da_loss(dsa_input: &Tensor, dsa_target: &Tensor) -> Result<f64> {
    pixel_loss(dsa_input, dsa_target)
}

/// Per-image mean SSIM over all `window×window` positions and channels: `[B]`.
pub fn ssim_on_tape(
    tape: &mut Tape,
    a: Var,
    b: Var,
    window: usize,
    c1: f64,
    c2: f64,
) -> Result<Var> {
    same_shape(tape, a, b, "ssim")?;
    let batch = tape.shape(a)[0];
    let mu_a = tape.box_mean(a, window)?;
    let mu_b = tape.box_mean(b, window)?;
    let aa = tape.square(a)?;
    let bb = tape.square(b)?;
    let ab = tape.mul(a, b)?;
    let e_aa = tape.box_mean(aa, window)?;
    let e_bb = tape.box_mean(bb, window)?;
    let e_ab = tape.box_mean(ab, window)?;

    let mu_aa = tape.square(mu_a)?;
    let mu_bb = tape.square(mu_b)?;
    let mu_ab = tape.mul(mu_a, mu_b)?;
    let var_a = tape.sub(e_aa, mu_aa)?;
    let var_b = tape.sub(e_bb, mu_bb)?;
    let cov = tape.sub(e_ab, mu_ab)?;

    let lum_num = tape.scale(mu_ab, 2.0)?;
    let lum_num = tape.shift(lum_num, c1)?;
    let lum_den = tape.add(mu_aa, mu_bb)?;
    let lum_den = tape.shift(lum_den, c1)?;
    let cs_num = tape.scale(cov, 2.0)?;
    let cs_num = tape.shift(cs_num, c2)?;
    let cs_den = tape.add(var_a, var_b)?;
    let cs_den = tape.shift(cs_den, c2)?;
    let num = tape.mul(lum_num, cs_num)?;
    let den = tape.mul(lum_den, cs_den)?;
    let map = tape.div(num, den)?;

    let per_image = tape.value(map).numel() / batch;
    let flat = tape.reshape(map, &[batch, per_image])?;
    let sums = tape.sum_axis(flat, 1)?;
    tape.scale(sums, 1.0 / per_image as f64)
}

/// `mean_b −log(max(SSIM_b, PROB_FLOOR))` with the default window and constants.
pub fn ssim_loss_on_tape(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let s = ssim_on_tape(tape, pred, target, SSIM_WINDOW, SSIM_C1, SSIM_C2)?;
    neg_log_mean(tape, s)
}

pub fn ssim(a: &Tensor, b: &Tensor, window: usize, c1: f64, c2: f64) -> Result<f64> {
    let per_image = evaluate(&[a.clone(), b.clone()], |t, v| {
        ssim_on_tape(t, v[0], v[1], window, c1, c2)
    })?;
    Ok(per_image.mean())
}

pub fn ssim_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    evaluate(&[pred.clone(), target.clone()], |t, v| {
        ssim_loss_on_tape(t, v[0], v[1])
    })
    .map(scalar_of)
}

fn neg_log_mean(tape: &mut Tape, p: Var) -> Result<Var> {
    let p = tape.clamp(p, PROB_FLOOR, f64::INFINITY)?;
    let l = tape.log(p)?;
    let m = tape.mean(l)?;
    tape.neg(m)
}

fn clamp_prob(tape: &mut Tape, p: Var) -> Result<Var> {
    tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `mean −log D(fake)`.
pub fn adv_generator_loss_on_tape(tape: &mut Tape, d_fake: Var) -> Result<Var> {
    let p = clamp_prob(tape, d_fake)?;
    neg_log_mean(tape, p)
}

/// `mean −log D(real) + mean −log(1 − D(fake))`.
pub fn adv_discriminator_loss_on_tape(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let pr = clamp_prob(tape, d_real)?;
    let real = neg_log_mean(tape, pr)?;
    let pf = clamp_prob(tape, d_fake)?;
    let pf = tape.neg(pf)?;
    let q = tape.shift(pf, 1.0)?;
    let fake = neg_log_mean(tape, q)?;
    tape.add(real, fake)
}

pub fn adv_generator_loss(d_fake: &[f64]) -> Result<f64> {
    evaluate(&[probs(d_fake)?], |t, v| {
        adv_generator_loss_on_tape(t, v[0])
    })
    .map(scalar_of)
}

pub fn adv_discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    evaluate(&[probs(d_real)?, probs(d_fake)?], |t, v| {
        adv_discriminator_loss_on_tape(t, v[0], v[1])
    })
    .map(scalar_of)
}

fn probs(p: &[f64]) -> Result<Tensor> {
    Tensor::new(&[p.len()], p.to_vec())
}

/// Weights of the generator and discriminator objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_ssim: f64,
    pub lambda_adv: f64,
    pub lambda_ot: f64,
    pub lambda_da: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 100.0,
            lambda_ssim: 1.0,
            lambda_adv: 1.0,
            lambda_ot: 0.01,
            lambda_da: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_p,
            self.lambda_ssim,
            self.lambda_adv,
            self.lambda_ot,
            self.lambda_da,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(contract("loss weights must be finite and nonnegative"))
        }
    }
}

/// Scalar generator loss terms before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorComponents {
    pub pixel: f64,
    pub ssim: f64,
    pub adv: f64,
    pub ot: f64,
}

impl GeneratorComponents {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("pixel", self.pixel),
            ("ssim", self.ssim),
            ("adv", self.adv),
            ("ot", self.ot),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteComponent(name));
            }
        }
        Ok(())
    }
}

/// `λ_P·L_P + λ_SSIM·L_SSIM + λ_ADV·L_ADV + λ_OT·L_OT`.
pub fn generator_objective(c: &GeneratorComponents, w: &LossWeights) -> Result<f64> {
    c.check()?;
    w.validate()?;
    Ok(w.lambda_p * c.pixel + w.lambda_ssim * c.ssim + w.lambda_adv * c.adv + w.lambda_ot * c.ot)
}

/// Scalar tape variables for each generator term; `ot` is absent when the regulariser is off.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    pub pixel: Var,
    pub ssim: Var,
    pub adv: Var,
    pub ot: Option<Var>,
}

impl GeneratorTerms {
    pub fn values(&self, tape: &Tape) -> GeneratorComponents {
        GeneratorComponents {
            pixel: tape.value(self.pixel).item(),
            ssim: tape.value(self.ssim).item(),
            adv: tape.value(self.adv).item(),
            ot: self.ot.map_or(0.0, |v| tape.value(v).item()),
        }
    }
}

pub fn generator_objective_on_tape(
    tape: &mut Tape,
    terms: &GeneratorTerms,
    w: &LossWeights,
) -> Result<Var> {
    terms.values(tape).check()?;
    w.validate()?;
    let mut total = tape.scale(terms.pixel, w.lambda_p)?;
    for (v, lambda) in [(terms.ssim, w.lambda_ssim), (terms.adv, w.lambda_adv)] {
        let s = tape.scale(v, lambda)?;
        total = tape.add(total, s)?;
    }
    if let Some(ot) = terms.ot {
        let s = tape.scale(ot, w.lambda_ot)?;
        total = tape.add(total, s)?;
    }
    Ok(total)
}

/// Adversarial discriminator loss plus `λ_DA·da`.
pub fn discriminator_objective(
    d_real: &[f64],
    d_fake: &[f64],
    da: f64,
    w: &LossWeights,
) -> Result<f64> {
    if !da.is_finite() {
        return Err(Error::NonFiniteComponent("da"));
    }
    w.validate()?;
    Ok(adv_discriminator_loss(d_real, d_fake)? + w.lambda_da * da)
}

pub fn discriminator_objective_on_tape(
    tape: &mut Tape,
    d_real: Var,
    d_fake: Var,
    da: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let adv = adv_discriminator_loss_on_tape(tape, d_real, d_fake)?;
    match da {
        Some(da) => {
            if !tape.value(da).item().is_finite() {
                return Err(Error::NonFiniteComponent("da"));
            }
            let s = tape.scale(da, w.lambda_da)?;
            tape.add(adv, s)
        }
        None => Ok(adv),
    }
}

/// Sinkhorn divergence between the generated and real batches.
///
/// Each image is one atom of a uniform empirical measure, flattened and scaled
/// by `1/√D` for `D` pixels so the squared cost is a per-pixel mean. The
/// divergence enters the tape as a scalar whose gradient is the coupling-based
/// gradient in the generated atoms.
#[derive(Clone, Debug)]
pub struct SinkhornLoss {
    pub config: DivergenceConfig,
    calls: Cell<u64>,
}

impl SinkhornLoss {
    pub fn new(config: DivergenceConfig) -> Self {
        Self {
            config,
            calls: Cell::new(0),
        }
    }

    /// Number of divergence evaluations so far.
    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    pub fn on_tape(&self, tape: &mut Tape, fake: Var, real: &Tensor) -> Result<Var> {
        let shape = tape.shape(fake).to_vec();
        let batch = shape[0];
        let dim = tape.value(fake).numel() / batch;
        if real.shape().is_empty() || real.numel() / real.shape()[0] != dim {
            return Err(shape_err("sinkhorn loss", &shape, real.shape()));
        }
        let s = 1.0 / libm::sqrt(dim as f64);
        let xs = tape.value(fake).reshape(&[batch, dim])?.scale(s);
        let ys = real.reshape(&[real.shape()[0], dim])?.scale(s);
        self.calls.set(self.calls.get() + 1);
        let out = divergence_with_gradient(&xs, &ys, &[], &[], &self.config)?;
        let grad = out.grad_x.scale(s).reshape(&shape)?;
        tape.external(fake, out.value, grad)
    }
}

/// Plain-tensor per-image SSIM values, for reporting.
pub fn ssim_per_image(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let t = evaluate(&[a.clone(), b.clone()], |t, v| {
        ssim_on_tape(t, v[0], v[1], SSIM_WINDOW, SSIM_C1, SSIM_C2)
    })?;
    Ok(t.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, FD_STEP};
    use crate::rng;

    fn img(r: &mut crate::rng::Rng, shape: &[usize]) -> Tensor {
        Tensor::rand_uniform(shape, 0.0, 1.0, r)
    }

    #[test]
    fn pixel_loss_values() {
        let mut r = rng::stream(0, 141);
        let a = img(&mut r, &[2, 1, 3, 3]);
        assert_eq!(pixel_loss(&a, &a).unwrap(), 0.0);
        assert!((pixel_loss(&a.map(|v| v + 1.0), &a).unwrap() - 1.0).abs() < 1e-12);
        let b = img(&mut r, &[2, 1, 3, 3]);
        let want = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 18.0;
        assert!((pixel_loss(&a, &b).unwrap() - want).abs() < 1e-12);
        assert!(matches!(
            pixel_loss(&a, &Tensor::zeros(&[18])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut r = rng::stream(1, 142);
        let a = img(&mut r, &[2, 1, 9, 9]);
        assert!((ssim(&a, &a, 7, SSIM_C1, SSIM_C2).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim_loss(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = Tensor::zeros(&[1, 1, 7, 7]);
        let b = Tensor::ones(&[1, 1, 7, 7]);
        let want = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b, 7, SSIM_C1, SSIM_C2).unwrap() - want).abs() < 1e-15);
        assert!((ssim_loss(&a, &b).unwrap() + libm::log(want)).abs() < 1e-9);
    }

    #[test]
    fn ssim_window_larger_than_image_is_rejected() {
        let a = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(matches!(ssim_loss(&a, &a), Err(Error::Contract(_))));
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let mut r = rng::stream(2, 143);
        let (h, w, win) = (9, 8, 7);
        let a = img(&mut r, &[1, 1, h, w]);
        let b = img(&mut r, &[1, 1, h, w]);
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..=h - win {
            for j in 0..=w - win {
                let pick = |t: &Tensor| -> Vec<f64> {
                    let mut v = Vec::new();
                    for di in 0..win {
                        for dj in 0..win {
                            v.push(t.data()[(i + di) * w + j + dj]);
                        }
                    }
                    v
                };
                let (pa, pb) = (pick(&a), pick(&b));
                let n = pa.len() as f64;
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let va = pa.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
                let vb = pb.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / n;
                let cv = pa
                    .iter()
                    .zip(&pb)
                    .map(|(x, y)| (x - ma) * (y - mb))
                    .sum::<f64>()
                    / n;
                total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cv + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1.0;
            }
        }
        assert!((ssim(&a, &b, win, SSIM_C1, SSIM_C2).unwrap() - total / count).abs() < 1e-9);
    }

    #[test]
    fn adversarial_values() {
        assert!(adv_generator_loss(&[1.0]).unwrap() < 2e-7);
        let two_ln2 = 2.0 * core::f64::consts::LN_2;
        assert!((adv_discriminator_loss(&[0.5], &[0.5]).unwrap() - two_ln2).abs() < 1e-12);
        let real = [0.9, 0.3, 0.6];
        let fake = [0.2, 0.7, 0.05];
        let mut want = 0.0;
        for (r, f) in real.iter().zip(&fake) {
            want += -libm::log(*r) / 3.0 - libm::log(1.0 - f) / 3.0;
        }
        assert!((adv_discriminator_loss(&real, &fake).unwrap() - want).abs() < 1e-12);
        let g: f64 = fake.iter().map(|f| -libm::log(*f) / 3.0).sum();
        assert!((adv_generator_loss(&fake).unwrap() - g).abs() < 1e-12);
    }

    #[test]
    fn da_values() {
        let mut r = rng::stream(3, 144);
        let a = img(&mut r, &[2, 4, 4]);
        assert_eq!(da_loss(&a, &a).unwrap(), 0.0);
        assert!((da_loss(&a, &a.map(|v| v - 1.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_values() {
        let ones = GeneratorComponents {
            pixel: 1.0,
            ssim: 1.0,
            adv: 1.0,
            ot: 1.0,
        };
        let w = LossWeights::default();
        assert!((generator_objective(&ones, &w).unwrap() - 102.01).abs() < 1e-12);
        let zero = LossWeights {
            lambda_p: 0.0,
            lambda_ssim: 0.0,
            lambda_adv: 0.0,
            lambda_ot: 0.0,
            lambda_da: 0.0,
        };
        assert_eq!(generator_objective(&ones, &zero).unwrap(), 0.0);
        let bad = GeneratorComponents {
            ssim: f64::NAN,
            ..ones
        };
        assert_eq!(
            generator_objective(&bad, &w),
            Err(Error::NonFiniteComponent("ssim"))
        );

        let base = discriminator_objective(&[0.5], &[0.5], 0.0, &w).unwrap();
        assert!((base - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let with_da = discriminator_objective(&[0.5], &[0.5], 1.0, &w).unwrap();
        assert!((with_da - base - 0.1).abs() < 1e-15);
    }

    #[test]
    fn tape_objective_matches_plain() {
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let vals = [0.3, 1.7, 0.9, 0.05];
        let vars: Vec<Var> = vals.iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect();
        let terms = GeneratorTerms {
            pixel: vars[0],
            ssim: vars[1],
            adv: vars[2],
            ot: Some(vars[3]),
        };
        let total = generator_objective_on_tape(&mut tape, &terms, &w).unwrap();
        let want = generator_objective(&terms.values(&tape), &w).unwrap();
        assert!((tape.value(total).item() - want).abs() < 1e-12);
        let g = tape.backward(total).unwrap();
        assert_eq!(g.wrt(vars[3]).item(), 0.01);
    }

    #[test]
    fn loss_gradients() {
        for seed in 0..5 {
            let mut r = rng::stream(seed, 145);
            let a = img(&mut r, &[2, 1, 8, 8]);
            let b = img(&mut r, &[2, 1, 8, 8]);
            let rep = check_gradients(&[a.clone(), b.clone()], FD_STEP, |t, v| {
                let p = mse_on_tape(t, v[0], v[1])?;
                let s = ssim_loss_on_tape(t, v[0], v[1])?;
                t.add(p, s)
            })
            .unwrap();
            assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");

            let pr = Tensor::rand_uniform(&[4, 1], 0.05, 0.95, &mut r);
            let pf = Tensor::rand_uniform(&[4, 1], 0.05, 0.95, &mut r);
            let rep = check_gradients(&[pr, pf], FD_STEP, |t, v| {
                let d = adv_discriminator_loss_on_tape(t, v[0], v[1])?;
                let g = adv_generator_loss_on_tape(t, v[1])?;
                t.add(d, g)
            })
            .unwrap();
            assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn sinkhorn_loss_gradient_and_counter() {
        let mut r = rng::stream(4, 146);
        let fake = img(&mut r, &[3, 1, 2, 2]);
        let real = img(&mut r, &[3, 1, 2, 2]);
        let loss = SinkhornLoss::new(DivergenceConfig::new(0.5, 20000, 2.0));
        assert_eq!(loss.calls(), 0);
        let rep = check_gradients(&[fake], FD_STEP, |t, v| loss.on_tape(t, v[0], &real)).unwrap();
        assert!(rep.passes(1e-3), "{rep:?}");
        assert!(loss.calls() > 0);
    }

    #[test]
    fn sinkhorn_loss_vanishes_on_identical_batches() {
        let mut r = rng::stream(5, 147);
        let x = img(&mut r, &[4, 1, 3, 3]);
        let loss = SinkhornLoss::new(DivergenceConfig::new(0.1, 20000, 2.0));
        let v = evaluate(core::slice::from_ref(&x), |t, v| loss.on_tape(t, v[0], &x)).unwrap();
        assert!(v.item().abs() < 1e-6);
    }
}
