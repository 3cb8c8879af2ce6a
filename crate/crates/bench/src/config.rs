//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Each command reads the
//! keys it knows with [`RawConfig::take`] and then calls [`RawConfig::finish`],
//! which rejects anything left over.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sinkgraph_core::losses::LossWeights;

use crate::error::{io_err, BenchError, Result};

#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| BenchError::Config {
                line,
                msg: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(BenchError::Config {
                    line,
                    msg: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), (value.trim().to_string(), line))
                .is_some()
            {
                return Err(BenchError::Config {
                    line,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Parses and removes `key`, if present.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((value, _)) = self.entries.remove(key) else {
            return Ok(None);
        };
        value
            .parse()
            .map(Some)
            .map_err(|e: T::Err| BenchError::ConfigValue {
                key: key.into(),
                value,
                msg: e.to_string(),
            })
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((value, _)) = self.entries.remove(key) else {
            return Ok(None);
        };
        value
            .split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e: T::Err| BenchError::ConfigValue {
                        key: key.into(),
                        value: value.clone(),
                        msg: e.to_string(),
                    })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(BenchError::UnknownKey { key, line }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    SinkhornGan,
    PlainGan,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sinkhorn-gan" => Ok(Mode::SinkhornGan),
            "plain-gan" => Ok(Mode::PlainGan),
            other => Err(format!("expected sinkhorn-gan or plain-gan, got {other}")),
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::SinkhornGan => "sinkhorn-gan",
            Mode::PlainGan => "plain-gan",
        })
    }
}

/// Generator used by the denoising experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Two encoder and two decoder convolutions.
    Conv,
    /// The same autoencoder with one HTB between encoder and decoder.
    Htb,
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "conv" => Ok(GeneratorKind::Conv),
            "htb" => Ok(GeneratorKind::Htb),
            other => Err(format!("expected conv or htb, got {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic,
    Idx { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_count: usize,
    pub test_count: usize,
    pub side: usize,
    pub noise_sigma: f64,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub max_epochs: usize,
    pub convergence_mse: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub mode: Mode,
    pub discriminator_updates: usize,
    pub generator: GeneratorKind,
    pub widths: (usize, usize),
    pub disc_hidden: (usize, usize),
    /// Record step wall-clock time; off by default so CSVs are reproducible.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic,
            train_count: 2000,
            test_count: 500,
            side: 16,
            noise_sigma: 0.3,
            batch_size: 64,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            max_epochs: 500,
            convergence_mse: 0.04,
            epsilon: 0.1,
            sinkhorn_iters: 10,
            weights: LossWeights::default(),
            seed: 0,
            mode: Mode::SinkhornGan,
            discriminator_updates: 1,
            generator: GeneratorKind::Conv,
            widths: (16, 32),
            disc_hidden: (1024, 256),
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads every experiment key from `raw`, leaving other keys in place.
    pub fn take_from(raw: &mut RawConfig) -> Result<Self> {
        let d = Self::default();
        let data = match raw
            .take_or::<String>("dataset", "synthetic".into())?
            .as_str()
        {
            "synthetic" => DataSource::Synthetic,
            "idx" => {
                let train = raw.take::<PathBuf>("train_images")?;
                let test = raw.take::<PathBuf>("test_images")?;
                match (train, test) {
                    (Some(train), Some(test)) => DataSource::Idx { train, test },
                    _ => {
                        return Err(BenchError::Setup(
                            "dataset = idx needs train_images and test_images".into(),
                        ))
                    }
                }
            }
            other => {
                return Err(BenchError::ConfigValue {
                    key: "dataset".into(),
                    value: other.into(),
                    msg: "expected synthetic or idx".into(),
                })
            }
        };
        let cfg = Self {
            data,
            train_count: raw.take_or("train_count", d.train_count)?,
            test_count: raw.take_or("test_count", d.test_count)?,
            side: raw.take_or("side", d.side)?,
            noise_sigma: raw.take_or("noise_sigma", d.noise_sigma)?,
            batch_size: raw.take_or("batch_size", d.batch_size)?,
            lr_generator: raw.take_or("lr_generator", d.lr_generator)?,
            lr_discriminator: raw.take_or("lr_discriminator", d.lr_discriminator)?,
            max_epochs: raw.take_or("max_epochs", d.max_epochs)?,
            convergence_mse: raw.take_or("convergence_mse", d.convergence_mse)?,
            epsilon: raw.take_or("epsilon", d.epsilon)?,
            sinkhorn_iters: raw.take_or("sinkhorn_iters", d.sinkhorn_iters)?,
            weights: LossWeights {
                lambda_p: raw.take_or("lambda_p", d.weights.lambda_p)?,
                lambda_ssim: raw.take_or("lambda_ssim", d.weights.lambda_ssim)?,
                lambda_adv: raw.take_or("lambda_adv", d.weights.lambda_adv)?,
                lambda_ot: raw.take_or("lambda_ot", d.weights.lambda_ot)?,
                lambda_da: raw.take_or("lambda_da", d.weights.lambda_da)?,
            },
            seed: raw.take_or("seed", d.seed)?,
            mode: raw.take_or("mode", d.mode)?,
            discriminator_updates: raw.take_or("discriminator_updates", d.discriminator_updates)?,
            generator: raw.take_or("generator", d.generator)?,
            widths: (
                raw.take_or("width1", d.widths.0)?,
                raw.take_or("width2", d.widths.1)?,
            ),
            disc_hidden: (
                raw.take_or("disc_hidden1", d.disc_hidden.0)?,
                raw.take_or("disc_hidden2", d.disc_hidden.1)?,
            ),
            record_wall_time: raw.take_or("record_wall_time", d.record_wall_time)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(BenchError::Setup(msg.into()));
        if self.convergence_mse.is_nan() || self.convergence_mse <= 0.0 {
            return bad("convergence_mse must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.batch_size == 0 || self.train_count == 0 || self.test_count == 0 {
            return bad("batch_size, train_count and test_count must be positive");
        }
        if self.side < 8 {
            return bad("side must be at least 8");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.sinkhorn_iters == 0 {
            return bad("epsilon and sinkhorn_iters must be positive");
        }
        if self.discriminator_updates == 0 {
            return bad("discriminator_updates must be at least 1");
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return bad("noise_sigma must be nonnegative");
        }
        self.weights.validate()?;
        Ok(())
    }
}
