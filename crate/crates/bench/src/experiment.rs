//! The denoising GAN experiment and ε sweeps over it.
//!
//! Noisy inputs, minibatch order and initial weights are drawn from streams
//! that depend only on the seed and the epoch, so two runs that differ in mode
//! or `ε` see exactly the same data.

use std::time::Instant;

use rand::seq::SliceRandom;
use sinkgraph_core::losses::{
    adv_generator_loss_on_tape, discriminator_objective_on_tape, generator_objective_on_tape,
    mse_on_tape, ssim_loss_on_tape, GeneratorTerms, SinkhornLoss,
};
use sinkgraph_core::nn::{Adam, AdamConfig};
use sinkgraph_core::rng::{stream, stream_id};
use sinkgraph_core::sinkhorn::DivergenceConfig;
use sinkgraph_core::{ParamStore, Tape, Tensor};

use crate::config::{DataSource, ExperimentConfig, Mode};
use crate::error::{BenchError, Result};
use crate::idx::load_idx;
use crate::metrics::{MetricsRecord, Table};
use crate::models::{grad_spectral_norm, Denoiser, MlpDiscriminator};
use crate::streams;
use crate::synth::synth_dataset;

/// Ground-cost exponent of the training-time Sinkhorn loss.
pub const OT_EXPONENT: f64 = 2.0;
/// Decay of the logged gradient-norm moving averages.
pub const EMA_DECAY: f64 = 0.9;
/// Fraction of final steps whose raw gradient norms form the near-optimal average.
pub const NEAR_OPT_FRACTION: f64 = 0.1;
/// Logged layer index of the hidden (second encoder) convolution.
pub const HIDDEN_LAYER: usize = 1;

/// Clean images, `[N, 1, side, side]` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Tensor,
    pub test: Tensor,
}

impl Dataset {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, test) = match &cfg.data {
            DataSource::Synthetic => {
                let all = synth_dataset(cfg.train_count + cfg.test_count, cfg.side, cfg.seed);
                (
                    rows(&all, 0, cfg.train_count)?,
                    rows(&all, cfg.train_count, cfg.test_count)?,
                )
            }
            DataSource::Idx { train, test } => {
                let train = load_idx(train, None)?.0;
                let test = load_idx(test, None)?.0;
                if train.shape()[2] != cfg.side
                    || train.shape()[3] != cfg.side
                    || test.shape()[2..] != train.shape()[2..]
                {
                    return Err(BenchError::Setup(format!(
                        "IDX images are {}×{}, config side is {}",
                        train.shape()[2],
                        train.shape()[3],
                        cfg.side
                    )));
                }
                let nt = cfg.train_count.min(train.shape()[0]);
                let ns = cfg.test_count.min(test.shape()[0]);
                (rows(&train, 0, nt)?, rows(&test, 0, ns)?)
            }
        };
        Ok(Self { train, test })
    }
}

fn rows(t: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let per = t.numel() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = count;
    Ok(Tensor::new(
        &shape,
        t.data()[start * per..(start + count) * per].to_vec(),
    )?)
}

fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let per = t.numel() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Ok(Tensor::new(&shape, data)?)
}

/// `clean + σ·n`, clipped to `[0, 1]`.
fn add_noise(clean: &Tensor, sigma: f64, rng: &mut sinkgraph_core::rng::Rng) -> Result<Tensor> {
    let n = Tensor::randn(clean.shape(), rng);
    let data = clean
        .data()
        .iter()
        .zip(n.data())
        .map(|(c, z)| (c + sigma * z).clamp(0.0, 1.0))
        .collect();
    Ok(Tensor::new(clean.shape(), data)?)
}

/// Final state of one run, written as a row of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub seed: u64,
    pub mode: Mode,
    pub epsilon: f64,
    pub epochs_run: usize,
    pub epochs_to_threshold: Option<usize>,
    pub final_test_mse: f64,
    /// Mean raw gradient spectral norm of each logged layer over the final steps.
    pub near_opt_grad_norms: Vec<f64>,
    pub sinkhorn_calls: u64,
}

impl Summary {
    pub fn converged(&self) -> bool {
        self.epochs_to_threshold.is_some()
    }

    pub fn hidden_grad_norm(&self) -> f64 {
        self.near_opt_grad_norms[HIDDEN_LAYER]
    }
}

pub fn summary_table(rows: &[Summary]) -> Table {
    let layers = rows.first().map_or(0, |r| r.near_opt_grad_norms.len());
    let mut header: Vec<String> = [
        "seed",
        "mode",
        "epsilon",
        "epochs_run",
        "converged",
        "epochs_to_threshold",
        "final_test_mse",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..layers).map(|i| format!("near_opt_grad_norm_layer_{i}")));
    header.push("sinkhorn_calls".into());
    let mut t = Table::new(&header);
    for r in rows {
        let mut f = vec![
            r.seed.to_string(),
            r.mode.to_string(),
            r.epsilon.to_string(),
            r.epochs_run.to_string(),
            r.converged().to_string(),
            r.epochs_to_threshold
                .map_or(String::new(), |e| e.to_string()),
            r.final_test_mse.to_string(),
        ];
        f.extend(r.near_opt_grad_norms.iter().map(f64::to_string));
        f.push(r.sinkhorn_calls.to_string());
        t.push(f);
    }
    t
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub summary: Summary,
    pub layers: usize,
}

pub fn run_denoising(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    run_denoising_on(cfg, &Dataset::load(cfg)?)
}

#[derive(Default)]
struct EpochSums {
    total: f64,
    pixel: f64,
    ssim: f64,
    adv: f64,
    ot: f64,
    steps: usize,
}

/// Trains on an already loaded dataset until the test MSE reaches the
/// threshold or `max_epochs` have run.
pub fn run_denoising_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut store = ParamStore::new();
    let generator = Denoiser::new(
        &mut store,
        cfg,
        &mut stream(seed, stream_id(streams::GENERATOR_INIT, 0)),
    )?;
    let disc = MlpDiscriminator::new(
        &mut store,
        cfg,
        &mut stream(seed, stream_id(streams::DISCRIMINATOR_INIT, 0)),
    );
    let mut adam_g = Adam::for_params(
        &store,
        generator.trainable(&store),
        AdamConfig::with_lr(cfg.lr_generator),
    );
    let mut adam_d = Adam::for_params(
        &store,
        disc.params(),
        AdamConfig::with_lr(cfg.lr_discriminator),
    );
    let logged = generator.logged_layers();

    let mut weights = cfg.weights;
    if cfg.mode == Mode::PlainGan {
        weights.lambda_ot = 0.0;
    }
    let sinkhorn = SinkhornLoss::new(DivergenceConfig::fixed(
        cfg.epsilon,
        cfg.sinkhorn_iters,
        OT_EXPONENT,
    ));
    let noisy_test = add_noise(
        &data.test,
        cfg.noise_sigma,
        &mut stream(seed, stream_id(streams::TEST_NOISE, 0)),
    )?;

    let n = data.train.shape()[0];
    let mut order: Vec<usize> = (0..n).collect();
    let mut ema: Option<Vec<f64>> = None;
    let mut raw_norms: Vec<Vec<f64>> = Vec::new();
    let mut metrics = Vec::new();
    let mut step = 0;
    let mut epochs_to_threshold = None;
    let mut final_test_mse = f64::NAN;

    for epoch in 1..=cfg.max_epochs {
        let started = cfg.record_wall_time.then(Instant::now);
        order.sort_unstable();
        order.shuffle(&mut stream(seed, stream_id(streams::SHUFFLE, epoch as u64)));
        let mut noise_rng = stream(seed, stream_id(streams::NOISE, epoch as u64));
        let mut sums = EpochSums::default();
        let last_good_epoch = epoch.checked_sub(1).filter(|&e| e > 0);
        let diverged = |step: usize, context: String| BenchError::Diverged {
            epoch,
            step,
            context,
            last_good_epoch,
        };

        for batch in order.chunks(cfg.batch_size) {
            let clean = gather(&data.train, batch)?;
            let noisy = add_noise(&clean, cfg.noise_sigma, &mut noise_rng)?;

            let mut gt = Tape::new();
            let x = gt.constant(noisy);
            let fake = generator.forward(&mut gt, &store, x)?;
            let fake_value = gt.value(fake).clone();

            for _ in 0..cfg.discriminator_updates {
                let mut dt = Tape::new();
                let real = dt.constant(clean.clone());
                let detached = dt.constant(fake_value.clone());
                let d_real = disc.forward(&mut dt, &store, real)?;
                let d_fake = disc.forward(&mut dt, &store, detached)?;
                let loss =
                    discriminator_objective_on_tape(&mut dt, d_real, d_fake, None, &weights)?;
                if !dt.value(loss).item().is_finite() {
                    return Err(diverged(step, "discriminator loss is not finite".into()));
                }
                let grads = dt.backward(loss)?;
                let grads = grads.collect_ids(&store, adam_d.params());
                adam_d.step(&mut store, &grads)?;
            }

            let target = gt.constant(clean.clone());
            let pixel = mse_on_tape(&mut gt, fake, target)?;
            let ssim = ssim_loss_on_tape(&mut gt, fake, target)?;
            let d_fake = disc.forward(&mut gt, &store, fake)?;
            let adv = adv_generator_loss_on_tape(&mut gt, d_fake)?;
            let ot = match cfg.mode {
                Mode::SinkhornGan => Some(sinkhorn.on_tape(&mut gt, fake, &clean)?),
                Mode::PlainGan => None,
            };
            let terms = GeneratorTerms {
                pixel,
                ssim,
                adv,
                ot,
            };
            let parts = terms.values(&gt);
            let total = generator_objective_on_tape(&mut gt, &terms, &weights)
                .map_err(|e| diverged(step, format!("generator objective: {e}")))?;
            let total_value = gt.value(total).item();
            if !total_value.is_finite() {
                return Err(diverged(step, "generator loss is not finite".into()));
            }
            let grads = gt.backward(total)?;
            let norms = logged
                .iter()
                .map(|&id| grads.param(id).map_or(Ok(0.0), grad_spectral_norm))
                .collect::<Result<Vec<f64>>>()?;
            let grads = grads.collect_ids(&store, adam_g.params());
            adam_g.step(&mut store, &grads)?;
            step += 1;

            ema = Some(match ema {
                None => norms.clone(),
                Some(prev) => prev
                    .iter()
                    .zip(&norms)
                    .map(|(e, r)| EMA_DECAY * e + (1.0 - EMA_DECAY) * r)
                    .collect(),
            });
            raw_norms.push(norms);
            sums.total += total_value;
            sums.pixel += parts.pixel;
            sums.ssim += parts.ssim;
            sums.adv += parts.adv;
            sums.ot += parts.ot;
            sums.steps += 1;
        }

        let test_mse = evaluate_mse(&generator, &store, &noisy_test, &data.test, cfg.batch_size)?;
        if !test_mse.is_finite() {
            return Err(diverged(step, "test mse is not finite".into()));
        }
        final_test_mse = test_mse;
        let k = sums.steps.max(1) as f64;
        metrics.push(MetricsRecord {
            step,
            epoch,
            loss_total: sums.total / k,
            loss_p: sums.pixel / k,
            loss_ssim: sums.ssim / k,
            loss_adv: sums.adv / k,
            loss_ot: sums.ot / k,
            test_mse,
            grad_norms: ema.clone().unwrap_or_else(|| vec![0.0; logged.len()]),
            wall_ms: started.map_or(0, |t| t.elapsed().as_millis() as u64),
        });
        if test_mse <= cfg.convergence_mse {
            epochs_to_threshold = Some(epoch);
            break;
        }
    }

    let tail = ((raw_norms.len() as f64 * NEAR_OPT_FRACTION).ceil() as usize)
        .clamp(1, raw_norms.len().max(1));
    let near_opt_grad_norms = (0..logged.len())
        .map(|i| {
            let last = &raw_norms[raw_norms.len().saturating_sub(tail)..];
            last.iter().map(|r| r[i]).sum::<f64>() / last.len().max(1) as f64
        })
        .collect();
    let summary = Summary {
        seed,
        mode: cfg.mode,
        epsilon: cfg.epsilon,
        epochs_run: metrics.len(),
        epochs_to_threshold,
        final_test_mse,
        near_opt_grad_norms,
        sinkhorn_calls: sinkhorn.calls(),
    };
    Ok(RunOutput {
        metrics,
        summary,
        layers: logged.len(),
    })
}

/// Mean squared error of the denoised test images, evaluated in batches.
pub fn evaluate_mse(
    generator: &Denoiser,
    store: &ParamStore,
    noisy: &Tensor,
    clean: &Tensor,
    batch: usize,
) -> Result<f64> {
    let n = noisy.shape()[0];
    let mut sq = 0.0;
    let mut start = 0;
    while start < n {
        let len = batch.min(n - start);
        let mut tape = Tape::new();
        let x = tape.constant(rows(noisy, start, len)?);
        let y = generator.forward(&mut tape, store, x)?;
        let target = rows(clean, start, len)?;
        sq += tape
            .value(y)
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        start += len;
    }
    Ok(sq / noisy.numel() as f64)
}

/// One Sinkhorn-GAN run per `ε` on the same seed and data.
pub fn epsilon_sweep(cfg: &ExperimentConfig, epsilons: &[f64]) -> Result<Vec<RunOutput>> {
    if epsilons.is_empty() {
        return Err(BenchError::Setup(
            "epsilon sweep needs at least one epsilon".into(),
        ));
    }
    let data = Dataset::load(cfg)?;
    epsilons
        .iter()
        .map(|&epsilon| {
            let arm = ExperimentConfig {
                epsilon,
                mode: Mode::SinkhornGan,
                ..cfg.clone()
            };
            run_denoising_on(&arm, &data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            train_count: 64,
            test_count: 16,
            max_epochs: 1,
            batch_size: 32,
            widths: (4, 8),
            disc_hidden: (32, 16),
            mode,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn one_epoch_contract() {
        let out = run_denoising(&tiny(Mode::SinkhornGan)).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].step, 2);
        assert_eq!(out.summary.epochs_run, 1);
        assert_eq!(out.summary.sinkhorn_calls, 2);
        assert!(out.metrics[0].grad_norms.iter().all(|g| *g >= 0.0));
        assert!(out.metrics[0].loss_ot.is_finite());
    }

    #[test]
    fn plain_mode_never_calls_sinkhorn() {
        let out = run_denoising(&tiny(Mode::PlainGan)).unwrap();
        assert_eq!(out.summary.sinkhorn_calls, 0);
        assert_eq!(out.metrics[0].loss_ot, 0.0);
    }

    #[test]
    fn noise_is_clipped_and_mode_independent() {
        let clean = Tensor::full(&[2, 1, 8, 8], 0.5);
        let a = add_noise(&clean, 0.3, &mut stream(1, stream_id(streams::NOISE, 1))).unwrap();
        let b = add_noise(&clean, 0.3, &mut stream(1, stream_id(streams::NOISE, 1))).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_epsilon_sweep_matches_a_run() {
        let cfg = tiny(Mode::SinkhornGan);
        let sweep = epsilon_sweep(&cfg, &[cfg.epsilon]).unwrap();
        let run = run_denoising(&cfg).unwrap();
        assert_eq!(sweep[0].metrics, run.metrics);
        assert_eq!(sweep[0].summary, run.summary);
    }

    #[test]
    fn unreachable_threshold_runs_all_epochs() {
        let cfg = ExperimentConfig {
            max_epochs: 2,
            convergence_mse: 1e-12,
            ..tiny(Mode::PlainGan)
        };
        let out = run_denoising(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 2);
        assert_eq!(out.summary.epochs_to_threshold, None);
    }
}
