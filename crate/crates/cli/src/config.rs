//! Flat `key=value` experiment configuration.
//!
//! Values are layered: built-in defaults, then `GAR_SEED` from the environment,
//! then the config file, then `--set key=value` flags.

use std::fmt::Debug;
use std::path::PathBuf;
use std::str::FromStr;

use gar::data::SplitSpec;
use gar::gar::GarConfig;
use gar::kv;
use gar::network::{mlp4, Activation, LayerSpec, SgdConfig};
use gar::training::{batch_preset, default_batch_ratio, PretrainConfig, UnsupConfig, BATCH_PRESETS};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {key:?} ({origin}); valid keys: {valid}")]
    UnknownKey {
        key: String,
        origin: String,
        valid: String,
    },
    #[error("bad value {value:?} for {key} ({origin}): {msg}")]
    BadValue {
        key: String,
        value: String,
        origin: String,
        msg: String,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Mnist,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "blobs" => Ok(DatasetKind::Blobs),
            "mnist" => Ok(DatasetKind::Mnist),
            _ => Err("expected blobs or mnist".into()),
        }
    }
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Mnist => "mnist",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobParams {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
}

/// `auto` or an explicit count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Count {
    Auto,
    Fixed(usize),
}

impl FromStr for Count {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Count::Auto);
        }
        s.parse()
            .map(Count::Fixed)
            .map_err(|_| "expected auto or a nonnegative integer".into())
    }
}

impl Count {
    fn render(self) -> String {
        match self {
            Count::Auto => "auto".into(),
            Count::Fixed(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub mnist_dir: PathBuf,
    pub blobs: BlobParams,
    pub center: bool,
    pub model: String,
    pub m_l: usize,
    pub validation: usize,
    pub pretrain: PretrainConfig,
    pub b_l: Count,
    pub b_u: Count,
    pub batch_preset: String,
    pub unsup_epochs: usize,
    pub unsup_sgd: SgdConfig,
    pub gar: GarConfig,
    pub with_replacement: bool,
    pub metric_rows: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pretrain = PretrainConfig::default();
        ExperimentConfig {
            dataset: DatasetKind::Blobs,
            mnist_dir: PathBuf::from("data/mnist"),
            blobs: BlobParams {
                classes: 4,
                per_class: 500,
                test_per_class: 500,
                dim: 20,
                separation: 4.0,
                noise: 1.0,
            },
            center: false,
            model: "mlp2-64".into(),
            m_l: 40,
            validation: 200,
            pretrain,
            b_l: Count::Auto,
            b_u: Count::Auto,
            batch_preset: "none".into(),
            unsup_epochs: 100,
            unsup_sgd: SgdConfig::default(),
            gar: GarConfig::default(),
            with_replacement: false,
            metric_rows: 1000,
            seed: 0,
            output_dir: PathBuf::from("runs/gar"),
        }
    }
}

/// Every key with a one-line description, in `print-config` order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "blobs or mnist"),
    ("data.mnist_dir", "directory with the four MNIST IDX files (plain or .gz)"),
    ("data.classes", "blobs: number of classes"),
    ("data.per_class", "blobs: training examples per class"),
    ("data.test_per_class", "blobs: test examples per class"),
    ("data.dim", "blobs: feature dimension"),
    ("data.separation", "blobs: distance of each center from the origin"),
    ("data.noise", "blobs: gaussian noise scale"),
    ("data.center", "subtract each example's mean from its features"),
    ("model", "mlp4, mlp2-64, or hidden layers like relu:64:0.5,relu:64:0.5 (linear head added)"),
    ("split.m_l", "labeled examples, a multiple of the class count"),
    ("split.validation", "validation examples, stratified"),
    ("pretrain.batch_size", "supervised minibatch size"),
    ("pretrain.epochs", "supervised epochs"),
    ("pretrain.lr", "supervised learning rate"),
    ("pretrain.decay", "supervised learning-rate decay"),
    ("pretrain.momentum", "supervised Nesterov momentum"),
    ("unsup.b_L", "guidance rows per blended batch, auto = round(m_L/10) in [1, 127]"),
    ("unsup.b_U", "unlabeled rows per blended batch, auto = 128 - b_L"),
    ("unsup.preset", "none, mnist-100, svhn-1000 or norb; sets b_L/b_U when they are auto"),
    ("unsup.epochs", "unsupervised epochs"),
    ("unsup.lr", "unsupervised learning rate"),
    ("unsup.decay", "unsupervised learning-rate decay"),
    ("unsup.momentum", "unsupervised Nesterov momentum"),
    ("unsup.with_replacement", "draw guidance rows with replacement"),
    ("unsup.metric_rows", "X_U rows used to log U, alpha and beta each epoch"),
    ("gar.c_alpha", "affinity weight"),
    ("gar.c_beta", "balance weight"),
    ("gar.c_frob", "Frobenius weight"),
    ("gar.epsilon", "denominator guard"),
    ("seed", "master seed (GAR_SEED env var applies when no file or flag sets it)"),
    ("output_dir", "directory for run artifacts"),
];

fn valid_keys() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

impl ExperimentConfig {
    /// Applies one pair; `origin` names its source for error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let res: Result<(), String> = (|| {
            match key {
                "dataset" => self.dataset = value.parse()?,
                "data.mnist_dir" => self.mnist_dir = PathBuf::from(value),
                "data.classes" => self.blobs.classes = num(value)?,
                "data.per_class" => self.blobs.per_class = num(value)?,
                "data.test_per_class" => self.blobs.test_per_class = num(value)?,
                "data.dim" => self.blobs.dim = num(value)?,
                "data.separation" => self.blobs.separation = num(value)?,
                "data.noise" => self.blobs.noise = num(value)?,
                "data.center" => self.center = num(value)?,
                "model" => {
                    hidden_layers(value)?;
                    self.model = value.to_string();
                }
                "split.m_l" => self.m_l = num(value)?,
                "split.validation" => self.validation = num(value)?,
                "pretrain.batch_size" => self.pretrain.batch_size = num(value)?,
                "pretrain.epochs" => self.pretrain.epochs = num(value)?,
                "pretrain.lr" => self.pretrain.sgd.lr = num(value)?,
                "pretrain.decay" => self.pretrain.sgd.decay = num(value)?,
                "pretrain.momentum" => self.pretrain.sgd.momentum = num(value)?,
                "unsup.b_L" => self.b_l = value.parse()?,
                "unsup.b_U" => self.b_u = value.parse()?,
                "unsup.preset" => {
                    if value != "none" && batch_preset(value).is_none() {
                        let names: Vec<_> = BATCH_PRESETS.iter().map(|p| p.0).collect();
                        return Err(format!("expected none or one of {}", names.join(", ")));
                    }
                    self.batch_preset = value.to_string();
                }
                "unsup.epochs" => self.unsup_epochs = num(value)?,
                "unsup.lr" => self.unsup_sgd.lr = num(value)?,
                "unsup.decay" => self.unsup_sgd.decay = num(value)?,
                "unsup.momentum" => self.unsup_sgd.momentum = num(value)?,
                "unsup.with_replacement" => self.with_replacement = num(value)?,
                "unsup.metric_rows" => self.metric_rows = num(value)?,
                "gar.c_alpha" => self.gar.c_alpha = num(value)?,
                "gar.c_beta" => self.gar.c_beta = num(value)?,
                "gar.c_frob" => self.gar.c_frob = num(value)?,
                "gar.epsilon" => self.gar.epsilon = num(value)?,
                "seed" => self.seed = num(value)?,
                "output_dir" => self.output_dir = PathBuf::from(value),
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        res.map_err(|msg| {
            if KEYS.iter().any(|(k, _)| *k == key) {
                ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    origin: origin.into(),
                    msg,
                }
            } else {
                ConfigError::UnknownKey {
                    key: key.into(),
                    origin: origin.into(),
                    valid: valid_keys(),
                }
            }
        })
    }

    /// All keys with their current values, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let b = &self.blobs;
        vec![
            ("dataset", self.dataset.name().into()),
            ("data.mnist_dir", self.mnist_dir.display().to_string()),
            ("data.classes", b.classes.to_string()),
            ("data.per_class", b.per_class.to_string()),
            ("data.test_per_class", b.test_per_class.to_string()),
            ("data.dim", b.dim.to_string()),
            ("data.separation", float(b.separation)),
            ("data.noise", float(b.noise)),
            ("data.center", self.center.to_string()),
            ("model", self.model.clone()),
            ("split.m_l", self.m_l.to_string()),
            ("split.validation", self.validation.to_string()),
            ("pretrain.batch_size", self.pretrain.batch_size.to_string()),
            ("pretrain.epochs", self.pretrain.epochs.to_string()),
            ("pretrain.lr", float(self.pretrain.sgd.lr)),
            ("pretrain.decay", float(self.pretrain.sgd.decay)),
            ("pretrain.momentum", float(self.pretrain.sgd.momentum)),
            ("unsup.b_L", self.b_l.render()),
            ("unsup.b_U", self.b_u.render()),
            ("unsup.preset", self.batch_preset.clone()),
            ("unsup.epochs", self.unsup_epochs.to_string()),
            ("unsup.lr", float(self.unsup_sgd.lr)),
            ("unsup.decay", float(self.unsup_sgd.decay)),
            ("unsup.momentum", float(self.unsup_sgd.momentum)),
            ("unsup.with_replacement", self.with_replacement.to_string()),
            ("unsup.metric_rows", self.metric_rows.to_string()),
            ("gar.c_alpha", float(self.gar.c_alpha)),
            ("gar.c_beta", float(self.gar.c_beta)),
            ("gar.c_frob", float(self.gar.c_frob)),
            ("gar.epsilon", float(self.gar.epsilon)),
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ]
    }

    /// The `print-config` text: a commented header, then one pair per line.
    pub fn render(&self) -> String {
        let mut s = String::from("# GAR experiment configuration\n");
        for ((key, value), (_, doc)) in self.pairs().iter().zip(KEYS) {
            s.push_str(&format!("# {doc}\n{key}={value}\n"));
        }
        s
    }

    /// Layers defaults, `env_seed`, file text and `key=value` overrides, then validates.
    pub fn load(
        file: Option<&str>,
        overrides: &[String],
        env_seed: Option<&str>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(seed) = env_seed {
            cfg.set("seed", seed.trim(), "GAR_SEED")?;
        }
        if let Some(text) = file {
            let entries = kv::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
            for e in entries {
                cfg.set(&e.key, &e.value, &format!("line {}", e.line))?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax(format!("flag {o:?} is not key=value")))?;
            cfg.set(k.trim(), v.trim(), "flag")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Blobs => self.blobs.classes,
            DatasetKind::Mnist => 10,
        }
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>, ConfigError> {
        let mut specs = hidden_layers(&self.model).map_err(ConfigError::Invalid)?;
        specs.push(LayerSpec::linear(self.n_classes()));
        Ok(specs)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            m_l: self.m_l,
            validation_size: self.validation,
            seed: self.seed,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            ..self.pretrain
        }
    }

    pub fn batch_sizes(&self) -> Result<(usize, usize), ConfigError> {
        let preset = batch_preset(&self.batch_preset);
        let b_l = match (self.b_l, preset) {
            (Count::Fixed(n), _) => n,
            (Count::Auto, Some((l, _))) => l,
            (Count::Auto, None) => default_batch_ratio(self.m_l).0,
        };
        let b_u = match (self.b_u, preset) {
            (Count::Fixed(n), _) => n,
            (Count::Auto, Some((l, u))) if l == b_l => u,
            (Count::Auto, _) => 128usize.checked_sub(b_l).filter(|&u| u > 0).ok_or_else(|| {
                ConfigError::Invalid(format!("b_L={b_l} leaves no room for b_U = 128 - b_L"))
            })?,
        };
        Ok((b_l, b_u))
    }

    pub fn unsup_config(&self) -> Result<UnsupConfig, ConfigError> {
        let (b_l, b_u) = self.batch_sizes()?;
        Ok(UnsupConfig {
            b_l,
            b_u,
            epochs: self.unsup_epochs,
            gar: self.gar,
            sgd: self.unsup_sgd,
            seed: self.seed,
            with_replacement: self.with_replacement,
            metric_rows: self.metric_rows,
        })
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let n = self.n_classes();
        if n < 2 {
            return invalid(format!("need at least 2 classes, got {n}"));
        }
        let b = &self.blobs;
        if self.dataset == DatasetKind::Blobs
            && (b.per_class == 0 || b.test_per_class == 0 || b.dim == 0)
        {
            return invalid("blob counts and dimension must be positive".into());
        }
        if !(b.separation.is_finite() && b.noise.is_finite() && b.noise >= 0.0) {
            return invalid("blob separation and noise must be finite, noise >= 0".into());
        }
        self.split_spec()
            .validate(n, usize::MAX)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.pretrain.batch_size == 0 {
            return invalid("pretrain.batch_size must be positive".into());
        }
        for (name, sgd) in [("pretrain", self.pretrain.sgd), ("unsup", self.unsup_sgd)] {
            if !(sgd.lr > 0.0 && sgd.decay >= 0.0 && (0.0..1.0).contains(&sgd.momentum)) {
                return invalid(format!("{name}: need lr > 0, decay >= 0, 0 <= momentum < 1"));
            }
        }
        self.gar.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.layer_specs()?;
        let (b_l, b_u) = self.batch_sizes()?;
        if b_u == 0 {
            return invalid("unsup.b_U must be positive".into());
        }
        if b_l > self.m_l && !self.with_replacement {
            return invalid(format!(
                "unsup.b_L={b_l} exceeds split.m_l={}; set unsup.with_replacement=true to allow it",
                self.m_l
            ));
        }
        Ok(())
    }
}

/// Hidden layers of a model preset or an explicit `act:units[:dropout]` list.
pub fn hidden_layers(model: &str) -> Result<Vec<LayerSpec>, String> {
    match model {
        "mlp4" => {
            let mut specs = mlp4(2);
            specs.pop();
            return Ok(specs);
        }
        "mlp2-64" => return Ok(vec![LayerSpec::relu(64, 0.5), LayerSpec::relu(64, 0.5)]),
        _ => {}
    }
    let mut specs = Vec::new();
    for part in model.split(',').map(str::trim) {
        let fields: Vec<&str> = part.split(':').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(format!(
                "layer {part:?}: expected act:units[:dropout], or a preset (mlp4, mlp2-64)"
            ));
        }
        let activation: Activation = fields[0].parse().map_err(|e: gar::Error| e.to_string())?;
        if activation != Activation::Relu {
            return Err(format!("layer {part:?}: hidden layers must be relu"));
        }
        let units: usize = num(fields[1]).map_err(|e| format!("layer {part:?}: {e}"))?;
        let dropout: f64 = match fields.get(2) {
            Some(d) => num(d).map_err(|e| format!("layer {part:?}: {e}"))?,
            None => 0.0,
        };
        let spec = LayerSpec::relu(units, dropout);
        spec.validate().map_err(|e| e.to_string())?;
        specs.push(spec);
    }
    Ok(specs)
}
