//! Run configuration: a `key = value` file, then command-line overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_BIASES;
use crate::model::{Branches, ClassifierKind, Dims, LossConfig, LossMode, ModelConfig};
use crate::numerics::AdamConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    F32,
    F64,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Profile::F32),
            "f64" => Ok(Profile::F64),
            _ => Err(Error::Config(format!("unknown profile `{s}` (f32 | f64)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::F32 => "f32",
            Profile::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Model initialization and batch shuffling.
    pub seed: u64,
    /// Synthetic embeddings and dataset.
    pub data_seed: u64,
    pub synth: SynthSpec,
    pub semantic_dim: usize,
    pub visual_dim: usize,
    pub composition_dim: usize,
    pub hidden: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub profile: Profile,
    pub temperature: f64,
    pub branches: Branches,
    pub primitive_classifier: ClassifierKind,
    pub composition_classifier: ClassifierKind,
    pub teacher_forcing: bool,
    pub loss_mode: LossMode,
    pub n_biases: usize,
    pub betas: Vec<f64>,
    pub ablation_seeds: usize,
    pub embeddings: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_seed: 0,
            synth: SynthSpec::default(),
            semantic_dim: 16,
            visual_dim: 16,
            composition_dim: 16,
            hidden: 16,
            alpha: 4.0,
            beta: 0.2,
            lr: 3e-3,
            epochs: 200,
            batch_size: 32,
            profile: Profile::F64,
            temperature: 0.05,
            branches: Branches::ALL,
            primitive_classifier: ClassifierKind::Parametric,
            composition_classifier: ClassifierKind::NonParametric,
            teacher_forcing: false,
            loss_mode: LossMode::FullBce,
            n_biases: DEFAULT_BIASES,
            betas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            ablation_seeds: 3,
            embeddings: None,
            features: None,
            labels: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

/// Comma-separated reals.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "data_seed",
        "n_attrs",
        "n_objs",
        "d_x",
        "samples_per_pair",
        "seen_fraction",
        "test_seen_fraction",
        "noise_sigma",
        "entanglement",
        "d",
        "d_v",
        "d_c",
        "hidden",
        "alpha",
        "beta",
        "lr",
        "epochs",
        "batch_size",
        "profile",
        "temperature",
        "a2o",
        "o2a",
        "composition",
        "primitive_classifier",
        "composition_classifier",
        "teacher_forcing",
        "loss",
        "n_biases",
        "betas",
        "ablation_seeds",
        "embeddings",
        "features",
        "labels",
        "checkpoint",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "n_attrs" => self.synth.n_attrs = parse(key, v)?,
            "n_objs" => self.synth.n_objs = parse(key, v)?,
            "d_x" => self.synth.d_x = parse(key, v)?,
            "samples_per_pair" => self.synth.samples_per_pair = parse(key, v)?,
            "seen_fraction" => self.synth.seen_fraction = parse(key, v)?,
            "test_seen_fraction" => self.synth.test_seen_fraction = parse(key, v)?,
            "noise_sigma" => self.synth.noise_sigma = parse(key, v)?,
            "entanglement" => self.synth.entanglement = parse(key, v)?,
            "d" => self.semantic_dim = parse(key, v)?,
            "d_v" => self.visual_dim = parse(key, v)?,
            "d_c" => self.composition_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "profile" => self.profile = v.parse()?,
            "temperature" => self.temperature = parse(key, v)?,
            "a2o" => self.branches.a2o = parse_bool(key, v)?,
            "o2a" => self.branches.o2a = parse_bool(key, v)?,
            "composition" => self.branches.composition = parse_bool(key, v)?,
            "primitive_classifier" => self.primitive_classifier = v.parse()?,
            "composition_classifier" => self.composition_classifier = v.parse()?,
            "teacher_forcing" => self.teacher_forcing = parse_bool(key, v)?,
            "loss" => self.loss_mode = v.parse()?,
            "n_biases" => self.n_biases = parse(key, v)?,
            "betas" => self.betas = parse_list(key, v)?,
            "ablation_seeds" => self.ablation_seeds = parse(key, v)?,
            "embeddings" => self.embeddings = Some(v.into()),
            "features" => self.features = Some(v.into()),
            "labels" => self.labels = Some(v.into()),
            "checkpoint" => self.checkpoint = Some(v.into()),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn uses_files(&self) -> bool {
        self.features.is_some() || self.labels.is_some() || self.embeddings.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.branches;
        if !(b.any_cascade() || b.composition) {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !b.composition && self.beta != 1.0 {
            return Err(Error::Config(format!(
                "composition branch disabled: the fused score needs beta = 1, got {}",
                self.beta
            )));
        }
        if !b.any_cascade() && self.beta == 1.0 {
            return Err(Error::Config("no cascade branch enabled: beta = 1 leaves no score".into()));
        }
        if !b.composition && self.alpha == 0.0 {
            return Err(Error::Config("alpha = 0 with the composition branch disabled leaves no loss".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.n_biases < 2 {
            return Err(Error::Config(format!("n_biases must be >= 2, got {}", self.n_biases)));
        }
        if let Some(bad) = self.betas.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("betas must lie in [0, 1], got {bad}")));
        }
        if self.betas.is_empty() {
            return Err(Error::Config("betas is empty".into()));
        }
        if self.ablation_seeds == 0 {
            return Err(Error::Config("ablation_seeds must be >= 1".into()));
        }
        let files = [&self.features, &self.labels, &self.embeddings];
        if self.uses_files() && files.iter().any(|f| f.is_none()) {
            return Err(Error::Config("features, labels and embeddings must be given together".into()));
        }
        if !self.uses_files() {
            self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.model_config(self.synth.d_x).validate()?;
        Ok(())
    }

    pub fn model_config(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            dims: Dims {
                feature: feature_dim,
                semantic: self.semantic_dim,
                visual: self.visual_dim,
                composition: self.composition_dim,
                hidden: self.hidden,
            },
            branches: self.branches,
            primitive_classifier: self.primitive_classifier,
            composition_classifier: self.composition_classifier,
            temperature: self.temperature,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::with_lr(self.lr),
            loss: LossConfig {
                alpha: self.alpha,
                mode: self.loss_mode,
                teacher_forcing: self.teacher_forcing,
            },
            seed: self.seed,
        }
    }

    /// Synthetic spec with the data seed applied.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.data_seed,
            ..self.synth
        }
    }
}
