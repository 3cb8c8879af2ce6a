//! The CLI subcommands. Each reads an optional config file, lets `--seed`
//! override its `seed` key, and writes CSVs into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attnbench::{attn_bench, AttnBenchConfig};
use crate::config::{ExperimentConfig, RawConfig};
use crate::error::{io_err, BenchError, Result};
use crate::experiment::{epsilon_sweep, run_denoising, summary_table, RunOutput};
use crate::gradsuite::{grad_table, gradient_suite};
use crate::metrics::metrics_table;
use crate::otbench::{ot_bench, OtBenchConfig};

pub const DEFAULT_SWEEP: [f64; 3] = [1e-3, 0.1, 1e3];
pub const DEFAULT_GRAD_INSTANCES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Denoise,
    EpsSweep,
    OtBench,
    AttnBench,
    CheckGrads,
}

fn load(config: Option<&Path>, seed: Option<u64>) -> Result<(RawConfig, u64)> {
    let mut raw = match config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    let file_seed: u64 = raw.take_or("seed", 0)?;
    Ok((raw, seed.unwrap_or(file_seed)))
}

fn experiment(raw: &mut RawConfig, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::take_from(raw)?;
    cfg.seed = seed;
    Ok(cfg)
}

fn write_run(dir: &Path, run: &RunOutput, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("metrics.csv");
    metrics_table(&run.metrics, run.layers).write(&path)?;
    written.push(path);
    Ok(())
}

/// Runs `command` and returns the files it wrote.
pub fn run(
    command: Command,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let (mut raw, seed) = load(config, seed)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();
    match command {
        Command::Denoise => {
            let cfg = experiment(&mut raw, seed)?;
            raw.finish()?;
            let run = run_denoising(&cfg)?;
            write_run(out, &run, &mut written)?;
            let path = out.join("summary.csv");
            summary_table(&[run.summary]).write(&path)?;
            written.push(path);
        }
        Command::EpsSweep => {
            let epsilons = raw
                .take_list::<f64>("epsilons")?
                .unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            let cfg = experiment(&mut raw, seed)?;
            raw.finish()?;
            let runs = epsilon_sweep(&cfg, &epsilons)?;
            for run in &runs {
                write_run(
                    &out.join(format!("eps_{}", run.summary.epsilon)),
                    run,
                    &mut written,
                )?;
            }
            let path = out.join("summary.csv");
            summary_table(&runs.iter().map(|r| r.summary.clone()).collect::<Vec<_>>())
                .write(&path)?;
            written.push(path);
        }
        Command::OtBench => {
            let d = OtBenchConfig::default();
            let cfg = OtBenchConfig {
                sizes: raw.take_list("sizes")?.unwrap_or(d.sizes),
                epsilons: raw.take_list("epsilons")?.unwrap_or(d.epsilons),
                trials: raw.take_or("trials", d.trials)?,
                max_iters: raw.take_or("max_iters", d.max_iters)?,
                exponent: raw.take_or("exponent", d.exponent)?,
                seed,
                record_wall_time: raw.take_or("record_wall_time", d.record_wall_time)?,
            };
            raw.finish()?;
            if cfg.sizes.contains(&0) || cfg.trials == 0 {
                return Err(BenchError::Setup(
                    "sizes and trials must be positive".into(),
                ));
            }
            let path = out.join("ot_bench.csv");
            ot_bench(&cfg)?.write(&path)?;
            written.push(path);
        }
        Command::AttnBench => {
            let d = AttnBenchConfig::default();
            let cfg = AttnBenchConfig {
                nodes: raw.take_or("nodes", d.nodes)?,
                patch_h: raw.take_or("patch_h", d.patch_h)?,
                patch_w: raw.take_or("patch_w", d.patch_w)?,
                channels: raw.take_or("channels", d.channels)?,
                model_dim: raw.take_or("model_dim", d.model_dim)?,
                cutoffs: raw.take_list("cutoffs")?.unwrap_or(d.cutoffs),
                seed,
            };
            raw.finish()?;
            let res = attn_bench(&cfg)?;
            let path = out.join("attn_bench.csv");
            res.table(cfg.nodes).write(&path)?;
            written.push(path);
            let path = out.join("attn_fit.csv");
            res.fit_table().write(&path)?;
            written.push(path);
        }
        Command::CheckGrads => {
            let instances = raw.take_or("instances", DEFAULT_GRAD_INSTANCES)?;
            raw.finish()?;
            let rows = gradient_suite(seed, instances)?;
            let path = out.join("grad_checks.csv");
            grad_table(&rows).write(&path)?;
            written.push(path);
            if let Some(bad) = rows.iter().find(|r| !r.passes()) {
                return Err(BenchError::Setup(format!(
                    "gradient check `{}` failed: relative error {} above {}",
                    bad.name, bad.max_rel_err, bad.tol
                )));
            }
        }
    }
    Ok(written)
}
