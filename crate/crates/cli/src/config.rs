//! `key=value` run configuration.

use std::fmt;
use std::path::Path;

use sdmtl::loss::WeightScheme;
use sdmtl::{Ablation, ModelHyper, TrainConfig};

/// Keys accepted in a configuration file or via `--set`.
pub const KEYS: &[&str] = &[
    "frames",
    "horizon",
    "channels",
    "kernel",
    "enc_layers",
    "dec_layers",
    "stack_len",
    "ablate",
    "alpha",
    "loss",
    "lr",
    "steps",
    "batch_size",
    "seed",
    "save_interval",
    "stride",
    "root",
];

/// Invalid configuration input; maps to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: String) -> Result<T, UsageError> {
    Err(UsageError(msg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Window stride over training and validation sequences.
    pub stride: usize,
    /// Raw joint index used for root-centering.
    pub root: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            stride: 1,
            root: 0,
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value
        .parse()
        .or_else(|_| usage(format!("{key}: cannot parse {value:?}")))
}

fn ablation(value: &str) -> Result<Ablation, UsageError> {
    let mut a = Ablation::default();
    for tag in value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty() && *t != "none")
    {
        a.enable(tag)
            .map_err(|e| UsageError(format!("ablate: {e}")))?;
    }
    Ok(a)
}

impl RunConfig {
    /// Applies one setting; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let t = &mut self.train;
        let h: &mut ModelHyper = &mut t.hyper;
        match key {
            "frames" => h.frames = number(key, value)?,
            "horizon" => h.horizon = number(key, value)?,
            "channels" => h.channels = number(key, value)?,
            "kernel" => h.kernel = number(key, value)?,
            "enc_layers" => h.enc_layers = number(key, value)?,
            "dec_layers" => h.dec_layers = number(key, value)?,
            "stack_len" => h.stack_len = number(key, value)?,
            "ablate" => h.ablation = ablation(value)?,
            "alpha" => t.alpha = number(key, value)?,
            "loss" => {
                t.loss = value
                    .parse::<WeightScheme>()
                    .map_err(|e| UsageError(e.to_string()))?
            }
            "lr" => t.lr = number(key, value)?,
            "steps" => t.steps = number(key, value)?,
            "batch_size" => t.batch_size = number(key, value)?,
            "seed" => t.seed = number(key, value)?,
            "save_interval" => t.save_interval = number(key, value)?,
            "stride" => self.stride = number(key, value)?,
            "root" => self.root = number(key, value)?,
            other => {
                return usage(format!(
                    "unknown configuration key {other:?} (known: {})",
                    KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!(
                    "{origin}:{}: expected key=value, got {line:?}",
                    n + 1
                ));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| UsageError(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())?;
        Ok(())
    }

    /// Applies a `key=value` pair given on the command line.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        match pair.split_once('=') {
            Some((k, v)) => self.set(k.trim(), v.trim()),
            None => usage(format!("--set expects key=value, got {pair:?}")),
        }
    }
}
