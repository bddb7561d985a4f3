//! Run configuration: a line-oriented `key = value` file with `#` comments,
//! mode presets for the published threshold rows, and validation that
//! reports every violation on its own line.

use std::fs;
use std::path::Path;

use crate::corpus::BinConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{AdamHyper, TrainConfig};

/// Bin-threshold preset selected by `--mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    /// Single Large bin: the whole corpus goes through 8 heads.
    #[value(name = "nonadaptive")]
    NonAdaptive,
    /// L1 = 75, L2 = 150.
    Approach1,
    /// L1 = 110, L2 = 200.
    Approach2,
    /// Thresholds taken from the config file.
    Custom,
}

/// Merged view of bin, model and training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub l1: usize,
    pub l2: usize,
    pub max_len_cap: usize,
    pub pad_small: Option<usize>,
    pub pad_medium: Option<usize>,
    pub heads: [usize; 3],
    pub d_model: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_vocab: usize,
    pub min_freq: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Approach1,
            l1: 75,
            l2: 150,
            max_len_cap: 512,
            pad_small: None,
            pad_medium: None,
            heads: [2, 4, 8],
            d_model: 64,
            n_layers: 2,
            d_ff: 128,
            max_vocab: 20_000,
            min_freq: 2,
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file if given, then the mode preset, then
    /// flag overrides. Every violation is reported before returning.
    pub fn load(
        config_file: Option<&Path>,
        mode: Mode,
        seed: Option<u64>,
        epochs: Option<usize>,
    ) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_file {
            for (line_no, key, value) in parse_kv_file(path)? {
                cfg.apply(&key, &value).map_err(|e| {
                    Error::Config(format!("{}:{}: {}", path.display(), line_no, e))
                })?;
            }
        }
        cfg.mode = mode;
        match mode {
            Mode::Approach1 => {
                cfg.l1 = 75;
                cfg.l2 = 150;
            }
            Mode::Approach2 => {
                cfg.l1 = 110;
                cfg.l2 = 200;
            }
            Mode::NonAdaptive | Mode::Custom => {}
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = epochs {
            cfg.epochs = epochs;
        }
        let violations = cfg.violations();
        if !violations.is_empty() {
            return Err(Error::Config(violations.join("\n")));
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("`{key}`: {what} (got `{value}`)"));
        let usize_of = |value: &str| value.parse::<usize>().map_err(|_| bad("expected an integer"));
        let f64_of = |value: &str| value.parse::<f64>().map_err(|_| bad("expected a number"));
        match key {
            "l1" => self.l1 = usize_of(value)?,
            "l2" => self.l2 = usize_of(value)?,
            "max_len_cap" => self.max_len_cap = usize_of(value)?,
            "pad_small" => self.pad_small = Some(usize_of(value)?),
            "pad_medium" => self.pad_medium = Some(usize_of(value)?),
            "heads_small" => self.heads[0] = usize_of(value)?,
            "heads_medium" => self.heads[1] = usize_of(value)?,
            "heads_large" => self.heads[2] = usize_of(value)?,
            "d_model" => self.d_model = usize_of(value)?,
            "n_layers" => self.n_layers = usize_of(value)?,
            "d_ff" => self.d_ff = usize_of(value)?,
            "max_vocab" => self.max_vocab = usize_of(value)?,
            "min_freq" => self.min_freq = usize_of(value)?,
            "batch_size" => self.batch_size = usize_of(value)?,
            "epochs" => self.epochs = usize_of(value)?,
            "learning_rate" => self.learning_rate = f64_of(value)?,
            "beta1" => self.beta1 = f64_of(value)?,
            "beta2" => self.beta2 = f64_of(value)?,
            "adam_eps" => self.adam_eps = f64_of(value)?,
            "seed" => self.seed = value.parse::<u64>().map_err(|_| bad("expected an integer"))?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// One line per violated constraint; empty when the config is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0 < self.l1 && self.l1 < self.l2 && self.l2 < self.max_len_cap) {
            out.push(format!(
                "bin thresholds must satisfy 0 < L1 < L2 < max_len_cap, got L1={} L2={} cap={}",
                self.l1, self.l2, self.max_len_cap
            ));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            out.push(format!("d_model must be positive and even, got {}", self.d_model));
        }
        for (bin, &h) in ["small", "medium", "large"].iter().zip(&self.heads) {
            if h == 0 || (self.d_model > 0 && self.d_model % h.max(1) != 0) {
                out.push(format!(
                    "heads_{bin}={h} must be positive and divide d_model={}",
                    self.d_model
                ));
            }
        }
        if let Some(p) = self.pad_small {
            if p < self.l1 {
                out.push(format!("pad_small={p} must be at least L1={}", self.l1));
            }
        }
        if let Some(p) = self.pad_medium {
            if p < self.l2 {
                out.push(format!("pad_medium={p} must be at least L2={}", self.l2));
            }
        }
        if self.n_layers == 0 {
            out.push("n_layers must be at least 1".into());
        }
        if self.d_ff == 0 {
            out.push("d_ff must be at least 1".into());
        }
        if self.max_vocab < 2 {
            out.push(format!("max_vocab must be at least 2, got {}", self.max_vocab));
        }
        if self.batch_size < 1 {
            out.push("batch_size must be at least 1".into());
        }
        if self.epochs < 1 {
            out.push("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            out.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < beta && beta < 1.0) {
                out.push(format!("{name} must lie in (0, 1), got {beta}"));
            }
        }
        out
    }

    pub fn bin_config(&self) -> Result<BinConfig> {
        if self.mode == Mode::NonAdaptive {
            return Ok(BinConfig::non_adaptive(self.max_len_cap));
        }
        let mut bins = BinConfig::new(self.l1, self.l2, self.max_len_cap)?;
        bins.heads = self.heads;
        if let Some(p) = self.pad_small {
            bins.pad_len[0] = p;
        }
        if let Some(p) = self.pad_medium {
            bins.pad_len[1] = p;
        }
        bins.validate()?;
        Ok(bins)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        ModelConfig::new(
            self.d_model,
            self.n_layers,
            self.d_ff,
            vocab_size,
            self.bin_config()?,
        )
    }

    pub fn train_config(&self, vocab_size: usize, out_dir: &Path) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.model_config(vocab_size)?, out_dir);
        cfg.batch_size = self.batch_size;
        cfg.epochs = self.epochs;
        cfg.seed = self.seed;
        cfg.adam = AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        };
        Ok(cfg)
    }
}

/// Parses a `key = value` file, skipping blank lines and `#` comments.
/// Returns `(line_number, key, value)` triples.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected `key = value`, got `{raw}`",
                path.display(),
                i + 1
            ))
        })?;
        out.push((i + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}
