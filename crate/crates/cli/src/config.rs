//! Run configuration: an optional TOML file of `key = value` pairs,
//! overridden by command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use blockcodec::models::DEFAULT_TARGET_PSNR;
use blockcodec::pipeline::CodecConfig;
use blockcodec::training::{TrainConfig, AUGMENTED_STRIDE, PLAIN_STRIDE};
use serde::Deserialize;

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub width_mult: Option<f64>,
    pub target_psnr: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub augment: Option<bool>,
    pub code_opt: Option<bool>,
    pub code_opt_steps: Option<usize>,
    pub code_opt_lr: Option<f64>,
    pub eval_every: Option<usize>,
    pub deblock: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonFlags {
    /// TOML config file (`key = value` lines)
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Channel-width multiplier in (0, 1]
    #[arg(long, global = true)]
    pub width_mult: Option<f64>,
    /// Target PSNR in dB for network selection and partitioning
    #[arg(long, global = true)]
    pub target_psnr: Option<f64>,
    /// Disable inference-time code optimization
    #[arg(long, global = true)]
    pub no_code_opt: bool,
    /// Skip the deblocking filter when decoding
    #[arg(long, global = true)]
    pub no_deblock: bool,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub file: FileConfig,
    pub seed: u64,
    pub width_mult: f64,
    /// Explicit target, if any; otherwise the family manifest's value is used.
    pub target_psnr: Option<f64>,
    pub code_opt: bool,
    pub deblock: bool,
}

impl Settings {
    pub fn resolve(flags: &CommonFlags) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Settings {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            width_mult: flags.width_mult.or(file.width_mult).unwrap_or(1.0),
            target_psnr: flags.target_psnr.or(file.target_psnr),
            code_opt: !flags.no_code_opt && file.code_opt.unwrap_or(true),
            deblock: !flags.no_deblock && file.deblock.unwrap_or(true),
            file,
        })
    }

    pub fn train(&self, epochs: Option<usize>) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lr: self.file.lr.unwrap_or(d.lr),
            batch: self.file.batch.unwrap_or(d.batch),
            lambda: self.file.lambda.unwrap_or(d.lambda),
            epochs: epochs.or(self.file.epochs).unwrap_or(d.epochs),
            seed: self.seed,
            width_mult: self.width_mult,
            target_psnr: self.target_psnr.unwrap_or(DEFAULT_TARGET_PSNR),
        }
    }

    pub fn stride(&self) -> usize {
        if self.file.augment.unwrap_or(true) {
            AUGMENTED_STRIDE
        } else {
            PLAIN_STRIDE
        }
    }

    pub fn codec(&self, family_target: f64) -> CodecConfig {
        let d = CodecConfig::default();
        CodecConfig {
            target_psnr: self.target_psnr.unwrap_or(family_target),
            max_steps: if self.code_opt {
                self.file.code_opt_steps.unwrap_or(d.max_steps)
            } else {
                0
            },
            lr: self.file.code_opt_lr.unwrap_or(d.lr),
            eval_every: self.file.eval_every.unwrap_or(d.eval_every),
            deblock: self.deblock,
            lambda: self.file.lambda.unwrap_or(d.lambda),
            seed: self.seed,
        }
    }
}
