//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key maps onto one field of
//! [`RunConfig`]; CLI flags are applied afterwards through [`RunConfig::set`]
//! so they override the file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::campaign::CampaignMode;
use crate::models::{ModelConfig, VariantKind};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub variants: Vec<VariantKind>,
    pub mode: CampaignMode,
    pub fractions: Vec<f64>,
    pub bootstrap_resamples: usize,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            variants: VariantKind::ALL.to_vec(),
            mode: CampaignMode::Standard,
            fractions: default_fractions(),
            bootstrap_resamples: 1000,
            jobs: 1,
        }
    }
}

pub fn default_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub const KEYS: [&'static str; 23] = [
        "seed",
        "alpha_unk",
        "lr",
        "batch_size",
        "epochs_gen",
        "epochs_disc",
        "beta1",
        "beta2",
        "eps",
        "metric",
        "hn_layers",
        "generator",
        "trainable_embeddings",
        "max_tokens",
        "attn_trials",
        "rho",
        "drf_top_l",
        "k",
        "variants",
        "mode",
        "fractions",
        "bootstrap_resamples",
        "jobs",
    ];

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(message) => Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "alpha_unk" => t.alpha_unk = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs_gen" => t.epochs_gen = parse(key, value)?,
            "epochs_disc" => t.epochs_disc = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "eps" => t.eps = parse(key, value)?,
            "metric" => t.metric = parse(key, value)?,
            "hn_layers" => m.hn_layers = parse(key, value)?,
            "generator" => m.generator = parse(key, value)?,
            "trainable_embeddings" => m.trainable_embeddings = parse_bool(key, value)?,
            "max_tokens" => m.max_tokens = parse(key, value)?,
            "attn_trials" => m.attn_trials = parse(key, value)?,
            "rho" => m.drf.rho = parse(key, value)?,
            "drf_top_l" => m.drf.top_l = parse(key, value)?,
            "k" => m.drf.k = parse(key, value)?,
            "variants" => self.variants = parse_list(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "fractions" => self.fractions = parse_list(key, value)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        if self.variants.is_empty() {
            return Err(Error::Config("no variants selected".into()));
        }
        if self.fractions.is_empty()
            || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config("bootstrap_resamples must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }

    /// The full resolved configuration, one `key = value` per line, in
    /// [`Self::KEYS`] order. Parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let join = |items: Vec<String>| items.join(",");
        let mut out = String::new();
        for key in Self::KEYS {
            let value = match key {
                "seed" => t.seed.to_string(),
                "alpha_unk" => t.alpha_unk.to_string(),
                "lr" => t.lr.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "epochs_gen" => t.epochs_gen.to_string(),
                "epochs_disc" => t.epochs_disc.to_string(),
                "beta1" => t.beta1.to_string(),
                "beta2" => t.beta2.to_string(),
                "eps" => t.eps.to_string(),
                "metric" => t.metric.to_string(),
                "hn_layers" => m.hn_layers.to_string(),
                "generator" => m.generator.to_string(),
                "trainable_embeddings" => m.trainable_embeddings.to_string(),
                "max_tokens" => m.max_tokens.to_string(),
                "attn_trials" => m.attn_trials.to_string(),
                "rho" => m.drf.rho.to_string(),
                "drf_top_l" => m.drf.top_l.to_string(),
                "k" => m.drf.k.to_string(),
                "variants" => join(self.variants.iter().map(|v| v.to_string()).collect()),
                "mode" => self.mode.to_string(),
                "fractions" => join(self.fractions.iter().map(|f| f.to_string()).collect()),
                "bootstrap_resamples" => self.bootstrap_resamples.to_string(),
                "jobs" => self.jobs.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
